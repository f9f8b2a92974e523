//! Per-patient progression features and the pairwise descriptive-variable table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{PatientId, Sequence};
use crate::curves::SigmoidFit;
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "duration",
    "first_score",
    "overall_slope",
    "stiffest_slope",
    "score_m12",
    "pc_change_m6",
    "d50",
];

/// Column names of the pair table, in enumeration order.
pub const DESCRIPTIVE_NAMES: [&str; FEATURE_COUNT] = [
    "DURATION_DIFF",
    "FIRST_SCORE_DIFF",
    "SLOPE_DIFF",
    "HIGHEST_CONSECUTIVE_SLOPE_DIFF",
    "ALS_SCORE_M12_DIFF",
    "PC_CHANGE_M6_DIFF",
    "D50_DIFF",
];

pub const ONE_YEAR_DAY: f64 = 365.0;
pub const SIX_MONTH_DAY: f64 = 183.0;
pub const DEFAULT_SPEARMAN_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Days from first to last visit.
    pub duration: f64,
    pub first_score: f64,
    /// Points per day between first and last visit.
    pub overall_slope: f64,
    /// Steepest (most negative) slope between consecutive visits.
    pub stiffest_slope: f64,
    /// Fitted score at one year.
    pub score_m12: f64,
    /// Fractional decline of the fitted curve over six months.
    pub pc_change_m6: f64,
    /// Fitted day the score reaches 24.
    pub d50: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.duration,
            self.first_score,
            self.overall_slope,
            self.stiffest_slope,
            self.score_m12,
            self.pc_change_m6,
            self.d50,
        ]
    }

    pub fn from_array(v: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            duration: v[0],
            first_score: v[1],
            overall_slope: v[2],
            stiffest_slope: v[3],
            score_m12: v[4],
            pc_change_m6: v[5],
            d50: v[6],
        }
    }
}

pub fn sequence_features(seq: &Sequence, fit: &SigmoidFit, horizon_days: f64) -> Result<FeatureVector> {
    let visits = &seq.visits;
    let first = visits
        .first()
        .ok_or_else(|| Error::Internal(format!("patient {} has no visits", seq.patient_id)))?;
    let last = visits.last().unwrap();
    let duration = (last.day - first.day) as f64;
    if duration <= 0.0 {
        return Err(Error::Internal(format!(
            "patient {} has zero follow-up duration",
            seq.patient_id
        )));
    }
    let stiffest_slope = visits
        .windows(2)
        .map(|w| f64::from(w[1].total - w[0].total) / (w[1].day - w[0].day) as f64)
        .fold(f64::INFINITY, f64::min);
    let s0 = fit.eval(0.0);
    let pc_change_m6 = if s0.abs() > f64::EPSILON {
        (s0 - fit.eval(SIX_MONTH_DAY)) / s0
    } else {
        0.0
    };
    Ok(FeatureVector {
        duration,
        first_score: f64::from(first.total),
        overall_slope: f64::from(last.total - first.total) / duration,
        stiffest_slope,
        score_m12: fit.eval(ONE_YEAR_DAY),
        pc_change_m6,
        d50: fit.d50(horizon_days),
    })
}

/// Per-column min-max parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        MinMax {
            min,
            max,
            constant: !(max > min),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            v * (self.max - self.min) + self.min
        }
    }
}

pub type Row = [f64; FEATURE_COUNT];

/// All unordered patient pairs with their descriptive variables `|x_i - y_i|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    pub ids: Vec<PatientId>,
    /// `(i, j)` with `i < j`, indices into `ids`.
    pub pairs: Vec<(usize, usize)>,
    pub raw: Vec<Row>,
    pub normalized: Vec<Row>,
    pub params: Vec<MinMax>,
    pub retained: [bool; FEATURE_COUNT],
}

impl PairTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn retained_columns(&self) -> Vec<usize> {
        (0..FEATURE_COUNT).filter(|&c| self.retained[c]).collect()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.normalized.iter().map(|r| r[c]).collect()
    }

    /// Index of the row for patients `i` and `j` (any order), `i != j`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let n = self.ids.len();
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    }
}

/// Build all `n (n - 1) / 2` rows; `normalized` starts as a copy of `raw`.
pub fn pairwise_table(ids: &[PatientId], features: &[FeatureVector]) -> Result<PairTable> {
    if ids.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            got: features.len(),
        });
    }
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidArgument("pair table needs at least two patients".into()));
    }
    let arrays: Vec<Row> = features.iter().map(FeatureVector::to_array).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let raw: Vec<Row> = pairs
        .par_iter()
        .map(|&(i, j)| std::array::from_fn(|c| (arrays[i][c] - arrays[j][c]).abs()))
        .collect();
    Ok(PairTable {
        ids: ids.to_vec(),
        pairs,
        normalized: raw.clone(),
        raw,
        params: vec![
            MinMax {
                min: 0.0,
                max: 1.0,
                constant: false
            };
            FEATURE_COUNT
        ],
        retained: [true; FEATURE_COUNT],
    })
}

/// Min-max scale every column of `raw` into `normalized`.
pub fn minmax_normalize(table: &mut PairTable) -> Result<()> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty table".into()));
    }
    table.params = (0..FEATURE_COUNT)
        .map(|c| MinMax::fit(table.raw.iter().map(|r| r[c])))
        .collect();
    let params = &table.params;
    table.normalized = table
        .raw
        .par_iter()
        .map(|r| std::array::from_fn(|c| params[c].apply(r[c])))
        .collect();
    Ok(())
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman rank correlation; 0 when either column is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Drop the later column of every pair with `|rho| > threshold`.
pub fn spearman_filter(table: &PairTable, threshold: f64) -> [bool; FEATURE_COUNT] {
    let ranks: Vec<Vec<f64>> = (0..FEATURE_COUNT)
        .into_par_iter()
        .map(|c| average_ranks(&table.column(c)))
        .collect();
    let mut keep = [true; FEATURE_COUNT];
    for i in 0..FEATURE_COUNT {
        if !keep[i] {
            continue;
        }
        for j in i + 1..FEATURE_COUNT {
            if keep[j] && pearson(&ranks[i], &ranks[j]).abs() > threshold {
                keep[j] = false;
            }
        }
    }
    keep
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Everything the distances need: scaled per-patient vectors and the
/// normalized, filtered pair table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub ids: Vec<PatientId>,
    pub features: Vec<FeatureVector>,
    /// Per-patient min-max scaling of each feature across patients.
    pub patient_scaling: Vec<MinMax>,
    pub table: PairTable,
}

impl FeatureSpace {
    pub fn build(ids: &[PatientId], features: &[FeatureVector], spearman_threshold: f64) -> Result<Self> {
        let mut table = pairwise_table(ids, features)?;
        minmax_normalize(&mut table)?;
        table.retained = spearman_filter(&table, spearman_threshold);
        let patient_scaling = (0..FEATURE_COUNT)
            .map(|c| MinMax::fit(features.iter().map(|f| f.to_array()[c])))
            .collect();
        Ok(FeatureSpace {
            ids: ids.to_vec(),
            features: features.to_vec(),
            patient_scaling,
            table,
        })
    }

    /// Min-max scaled feature vectors restricted to the retained columns.
    pub fn patient_vectors(&self) -> Vec<Vec<f64>> {
        let cols = self.table.retained_columns();
        self.features
            .iter()
            .map(|f| {
                let a = f.to_array();
                cols.iter().map(|&c| self.patient_scaling[c].apply(a[c])).collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{PatientOutcome, Visit};
    use proptest::prelude::*;
    use rand::Rng;

    fn seq(points: &[(i64, i32)]) -> Sequence {
        Sequence {
            patient_id: "P".into(),
            visits: points
                .iter()
                .map(|&(day, total)| Visit {
                    day,
                    total,
                    subscores: None,
                })
                .collect(),
            outcome: PatientOutcome {
                survival_days: 1000,
                event_observed: true,
                first_contact_day: None,
            },
        }
    }

    fn reference_fit() -> SigmoidFit {
        SigmoidFit::from_params(48.0, 0.02, 300.0, 0.0)
    }

    #[test]
    fn sequence_slopes() {
        let s = seq(&[(0, 48), (100, 38), (250, 20), (400, 8)]);
        let f = sequence_features(&s, &reference_fit(), 3650.0).unwrap();
        assert_eq!(f.duration, 400.0);
        assert!((f.overall_slope - (-0.1)).abs() < 1e-15);
        let s = seq(&[(0, 48), (90, 46), (180, 30)]);
        let f = sequence_features(&s, &reference_fit(), 3650.0).unwrap();
        assert!((f.stiffest_slope - (-16.0 / 90.0)).abs() < 1e-15);
        assert!(f.stiffest_slope <= f.overall_slope);
    }

    #[test]
    fn sigmoid_features_match_closed_form() {
        let s = seq(&[(0, 48), (90, 46), (180, 44), (270, 30), (360, 12)]);
        let f = sequence_features(&s, &reference_fit(), 3650.0).unwrap();
        // Independent evaluation of the closed form.
        let curve = |t: f64| 48.0 / (1.0 + (0.02f64 * (t - 300.0)).exp());
        let s0 = curve(0.0);
        let s183 = curve(183.0);
        assert!((s0 - 47.881).abs() < 5e-4 && (s183 - 43.783).abs() < 5e-4);
        assert!((f.score_m12 - curve(365.0)).abs() < 1e-12);
        assert!((f.score_m12 - 10.280).abs() < 5e-4);
        assert!((f.pc_change_m6 - (s0 - s183) / s0).abs() < 1e-12);
        assert!((f.pc_change_m6 - 0.0856).abs() < 5e-5);
        assert!((f.d50 - 300.0).abs() < 1e-9);
    }

    #[test]
    fn zero_duration_is_internal_error() {
        let s = seq(&[(0, 48)]);
        assert!(matches!(
            sequence_features(&s, &reference_fit(), 3650.0),
            Err(Error::Internal(_))
        ));
    }

    fn fv(x: f64) -> FeatureVector {
        FeatureVector::from_array([x; FEATURE_COUNT])
    }

    fn ids(n: usize) -> Vec<PatientId> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    #[test]
    fn pair_counts_and_identity() {
        let t = pairwise_table(&ids(3), &[fv(1.0), fv(2.0), fv(4.0)]).unwrap();
        assert_eq!(t.len(), 3);
        // C(353, 2)
        let t = pairwise_table(&ids(353), &vec![fv(1.0); 353]).unwrap();
        assert_eq!(t.len(), 62_128);
        assert!(t.raw.iter().all(|r| r.iter().all(|&v| v == 0.0)));
        assert!(pairwise_table(&ids(1), &[fv(1.0)]).is_err());
    }

    #[test]
    fn pair_index_matches_enumeration() {
        let t = pairwise_table(&ids(9), &vec![fv(0.0); 9]).unwrap();
        for (k, &(i, j)) in t.pairs.iter().enumerate() {
            assert_eq!(t.pair_index(i, j), k);
            assert_eq!(t.pair_index(j, i), k);
        }
    }

    #[test]
    fn minmax_cases() {
        let p = MinMax::fit([2.0, 4.0, 6.0]);
        assert_eq!([2.0, 4.0, 6.0].map(|v| p.apply(v)), [0.0, 0.5, 1.0]);
        let c = MinMax::fit([3.0, 3.0]);
        assert!(c.constant);
        assert_eq!(c.apply(3.0), 0.0);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn independent_noise_columns_are_kept() {
        let mut rng = crate::seed::rng(42);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!(spearman(&x, &y).abs() < 0.05);
    }

    #[test]
    fn filter_drops_later_correlated_column() {
        let mut rng = crate::seed::rng(1);
        let features: Vec<FeatureVector> = (0..40)
            .map(|_| {
                let mut a: [f64; FEATURE_COUNT] = std::array::from_fn(|_| rng.random::<f64>());
                a[4] = a[1] * 3.0 + 1.0;
                FeatureVector::from_array(a)
            })
            .collect();
        let space = FeatureSpace::build(&ids(40), &features, 0.7).unwrap();
        assert!(space.table.retained[1]);
        assert!(!space.table.retained[4]);
        assert_eq!(space.table.retained.iter().filter(|&&k| !k).count(), 1);
        assert_eq!(space.patient_vectors()[0].len(), 6);
    }

    proptest! {
        #[test]
        fn minmax_round_trip(values in prop::collection::vec(-100f64..100.0, 2..50)) {
            let p = MinMax::fit(values.iter().copied());
            for &v in &values {
                let n = p.apply(v);
                prop_assert!((0.0..=1.0).contains(&n));
                if !p.constant {
                    prop_assert!((p.invert(n) - v).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn spearman_invariant_to_monotone_transform(
            x in prop::collection::vec(-100f64..100.0, 3..40),
            y in prop::collection::vec(-100f64..100.0, 40),
        ) {
            let y = &y[..x.len()];
            let base = spearman(&x, y);
            let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert!((spearman(&tx, y) - base).abs() < 1e-12);
        }

        #[test]
        fn swapped_patient_order_gives_same_rows(
            vals in prop::collection::vec(prop::array::uniform7(-10f64..10.0), 2..8)
        ) {
            let f: Vec<FeatureVector> = vals.iter().map(|&a| FeatureVector::from_array(a)).collect();
            let t = pairwise_table(&ids(f.len()), &f).unwrap();
            let mut rev = f.clone();
            rev.reverse();
            let r = pairwise_table(&ids(f.len()), &rev).unwrap();
            let n = f.len();
            for &(i, j) in &t.pairs {
                prop_assert_eq!(t.raw[t.pair_index(i, j)], r.raw[r.pair_index(n - 1 - i, n - 1 - j)]);
            }
        }
    }
}
