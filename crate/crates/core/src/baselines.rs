//! Reference stratifications: fixed-threshold rules on single progression
//! features and an independent multivariate dynamic-time-warping pipeline.

use serde::{Deserialize, Serialize};

use crate::cluster::{ahc_complete, Assignment, ClusterMethod};
use crate::cohort::{PatientId, Sequence, ITEM_COUNT};
use crate::embedding::{embed, EmbeddingParams};
use crate::error::{Error, Result};
use crate::features::{quantile, FeatureVector};
use crate::metrics::{DistanceMatrix, MatrixKind};

pub const GOM_THRESHOLD: f64 = 0.186;
pub const DAYS_PER_MONTH: f64 = 30.4375;
pub const HAL_K: [usize; 3] = [4, 5, 6];

/// Where the six-month decline cut comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GomThreshold {
    Fixed(f64),
    /// 90th percentile of the cohort's six-month declines.
    Percentile90,
}

impl Default for GomThreshold {
    fn default() -> Self {
        GomThreshold::Fixed(GOM_THRESHOLD)
    }
}

impl GomThreshold {
    pub fn resolve(self, features: &[FeatureVector]) -> f64 {
        match self {
            GomThreshold::Fixed(t) => t,
            GomThreshold::Percentile90 => {
                let v: Vec<f64> = features.iter().map(|f| f.pc_change_m6).collect();
                quantile(&v, 0.9)
            }
        }
    }
}

fn strata(labels: Vec<usize>, k: usize, name: &str) -> Assignment {
    let asg = Assignment {
        labels,
        k,
        method: ClusterMethod::Threshold,
        objective: 0.0,
    };
    if asg.is_degenerate() {
        log::warn!("{name}: only {} of {k} strata occupied", asg.occupied());
    }
    asg
}

/// Slow (0) when the six-month decline is below the threshold, fast (1) otherwise.
pub fn gom_strata(features: &[FeatureVector], threshold: GomThreshold) -> Assignment {
    let t = threshold.resolve(features);
    let labels = features.iter().map(|f| usize::from(f.pc_change_m6 >= t)).collect();
    strata(labels, 2, "GOM")
}

/// One-year score bins `<= 10`, `(10, 20]`, `(20, 30]`, `> 30`.
pub fn gro_bin(score: f64) -> usize {
    if score <= 10.0 {
        0
    } else if score <= 20.0 {
        1
    } else if score <= 30.0 {
        2
    } else {
        3
    }
}

pub fn gro_strata(features: &[FeatureVector]) -> Assignment {
    strata(features.iter().map(|f| gro_bin(f.score_m12)).collect(), 4, "GRO")
}

/// D50 in months: severe (< 20), intermediate (< 40), mild.
pub fn mey_bin(d50_days: f64) -> usize {
    let months = d50_days / DAYS_PER_MONTH;
    if months < 20.0 {
        0
    } else if months < 40.0 {
        1
    } else {
        2
    }
}

pub fn mey_strata(features: &[FeatureVector]) -> Assignment {
    strata(features.iter().map(|f| mey_bin(f.d50)).collect(), 3, "MEY")
}

/// Per-patient item scores over visits: `dims[item][visit]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeries {
    pub patient_id: PatientId,
    pub days: Vec<i64>,
    pub dims: Vec<Vec<f64>>,
}

impl MultiSeries {
    pub fn from_sequence(seq: &Sequence) -> Result<Self> {
        let mut dims: Vec<Vec<f64>> = (0..ITEM_COUNT).map(|_| Vec::with_capacity(seq.visits.len())).collect();
        for v in &seq.visits {
            let items = v
                .subscores
                .ok_or_else(|| Error::MissingSubscores(seq.patient_id.clone()))?;
            for (d, &s) in dims.iter_mut().zip(&items) {
                d.push(f64::from(s));
            }
        }
        Ok(MultiSeries {
            patient_id: seq.patient_id.clone(),
            days: seq.days().collect(),
            dims,
        })
    }

    /// Mean gap between consecutive visits, in days.
    pub fn mean_visit_gap(&self) -> f64 {
        match (self.days.first(), self.days.last()) {
            (Some(a), Some(b)) if self.days.len() > 1 => (b - a) as f64 / (self.days.len() - 1) as f64,
            _ => 0.0,
        }
    }
}

/// Classic dynamic time warping with `|a_i - b_j|` local cost.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("DTW needs non-empty series".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Sum of per-dimension DTW costs.
pub fn dtw_independent(p: &MultiSeries, q: &MultiSeries) -> Result<f64> {
    if p.dims.len() != q.dims.len() {
        return Err(Error::DimensionMismatch {
            expected: p.dims.len(),
            got: q.dims.len(),
        });
    }
    p.dims.iter().zip(&q.dims).map(|(a, b)| dtw(a, b)).sum()
}

/// DTW_I matrix over item subscores; every patient must carry subscores.
pub fn dtw_matrix(cohort: &[Sequence]) -> Result<DistanceMatrix> {
    let series = cohort.iter().map(MultiSeries::from_sequence).collect::<Result<Vec<_>>>()?;
    let ids = series.iter().map(|s| s.patient_id.clone()).collect();
    Ok(DistanceMatrix::from_fn(ids, MatrixKind::Dtw, |i, j| {
        dtw_independent(&series[i], &series[j]).expect("item series are non-empty with equal dimensions")
    }))
}

/// Complete-linkage clustering of the DTW_I matrix, optionally after embedding it.
pub fn hal_workflow(cohort: &[Sequence], k: usize, embedding: Option<&EmbeddingParams>) -> Result<Assignment> {
    let d = dtw_matrix(cohort)?;
    let asg = match embedding {
        Some(p) => ahc_complete(&embed(&d, p)?.distance_matrix(), k)?,
        None => ahc_complete(&d, k)?,
    };
    let small = asg.sizes().iter().filter(|&&s| s < 80).count();
    if small > 0 {
        log::info!("HAL k={k}: {small} clusters below 80 patients");
    }
    Ok(asg)
}
