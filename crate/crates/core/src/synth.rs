//! Synthetic cohorts with planted progression archetypes.
//!
//! Each patient draws an archetype, sigmoid parameters, irregular visit days
//! and noisy integer scores. Survival is tied to the analytic D50 of the
//! sampled curve so archetypes have distinct survival distributions.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng as _;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::cohort::{self, PatientId, PatientOutcome, Sequence, Visit, ITEM_COUNT, MAX_RISE};
use crate::curves::{SigmoidFit, DEFAULT_HORIZON_DAYS};
use crate::error::{Error, Result};
use crate::seed;

/// Closed interval sampled uniformly; `lo == hi` gives a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArchetype {
    pub label: String,
    pub b: Range,
    pub m: Range,
    pub a: Range,
    pub c: Range,
    pub visit_interval_mean: f64,
    pub visit_jitter: f64,
    pub follow_up: Range,
    /// Death day offset relative to D50.
    pub death_offset: Range,
    pub censoring_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub archetypes: Vec<(ClusterArchetype, f64)>,
    pub patients: usize,
    /// Standard deviation of the additive score noise, in points.
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Three well-separated archetypes: slow, medium and fast decliners.
    pub fn three_archetypes(patients: usize, noise_sd: f64, seed: u64) -> Self {
        let make = |label: &str, m: Range, a: Range, death: Range| ClusterArchetype {
            label: label.into(),
            b: Range::new(40.0, 44.0),
            m,
            a,
            c: Range::new(2.0, 4.0),
            visit_interval_mean: 90.0,
            visit_jitter: 15.0,
            follow_up: Range::new(540.0, 720.0),
            death_offset: death,
            censoring_prob: 0.1,
        };
        SynthSpec {
            archetypes: vec![
                (
                    make("slow", Range::new(0.004, 0.006), Range::new(1100.0, 1300.0), Range::new(60.0, 240.0)),
                    1.0 / 3.0,
                ),
                (
                    make("medium", Range::new(0.013, 0.017), Range::new(450.0, 550.0), Range::new(60.0, 240.0)),
                    1.0 / 3.0,
                ),
                (
                    make("fast", Range::new(0.035, 0.045), Range::new(180.0, 240.0), Range::new(60.0, 240.0)),
                    1.0 / 3.0,
                ),
            ],
            patients,
            noise_sd,
            seed,
        }
    }

    /// Four archetypes, used to characterize the multivariate DTW baseline.
    pub fn four_archetypes(patients: usize, noise_sd: f64, seed: u64) -> Self {
        let mut spec = Self::three_archetypes(patients, noise_sd, seed);
        let mut very_slow = spec.archetypes[0].0.clone();
        very_slow.label = "very_slow".into();
        very_slow.m = Range::new(0.002, 0.003);
        very_slow.a = Range::new(2200.0, 2600.0);
        spec.archetypes.push((very_slow, 0.25));
        for (_, w) in &mut spec.archetypes {
            *w = 0.25;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::InvalidSpec("no archetypes".into()));
        }
        if self.patients == 0 {
            return Err(Error::InvalidSpec("patient count must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidSpec("noise sd must be finite and >= 0".into()));
        }
        let total: f64 = self.archetypes.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 || self.archetypes.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::InvalidSpec(format!("weights must be >= 0 and sum to 1, got {total}")));
        }
        for (arch, _) in &self.archetypes {
            let bad = |what: &str| Err(Error::InvalidSpec(format!("archetype {}: {what}", arch.label)));
            for r in [arch.b, arch.m, arch.a, arch.c, arch.follow_up, arch.death_offset] {
                if !(r.lo <= r.hi && r.lo.is_finite() && r.hi.is_finite()) {
                    return bad("range bounds must be finite with lo <= hi");
                }
            }
            if arch.m.lo <= 0.0 {
                return bad("m must be > 0 (declining curves)");
            }
            if arch.b.lo < 0.0 || arch.c.lo < 0.0 || arch.b.hi + arch.c.hi > 48.0 {
                return bad("b, c must keep scores within [0, 48]");
            }
            if arch.visit_interval_mean <= 0.0 || arch.visit_jitter < 0.0 || arch.visit_jitter >= arch.visit_interval_mean {
                return bad("visit interval must be positive and exceed its jitter");
            }
            if !(0.0..=1.0).contains(&arch.censoring_prob) {
                return bad("censoring probability must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub sequences: Vec<Sequence>,
    /// Planted archetype label per patient, aligned with `sequences`.
    pub labels: Vec<(PatientId, String)>,
}

impl SynthCohort {
    /// Planted labels as dense integer ids, in archetype-declaration order.
    pub fn label_ids(&self, spec: &SynthSpec) -> Vec<usize> {
        self.labels
            .iter()
            .map(|(_, l)| {
                spec.archetypes
                    .iter()
                    .position(|(a, _)| &a.label == l)
                    .expect("label from spec")
            })
            .collect()
    }

    /// Write `visits.csv`, `outcomes.csv` and `planted_labels.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cohort::write_cohort(dir, &self.sequences)?;
        let path = dir.join("planted_labels.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["patient_id", "label"])?;
        for (id, label) in &self.labels {
            w.write_record([id, label])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Read `planted_labels.csv` (patient_id,label).
pub fn read_labels(path: &Path) -> Result<Vec<(PatientId, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// Split `total` across the items in proportion to `weights`, each capped at 4,
/// by largest-remainder rounding. The result sums exactly to `total`.
pub fn allocate_subscores(total: i32, weights: &[f64; ITEM_COUNT]) -> [u8; ITEM_COUNT] {
    let cap = f64::from(cohort::MAX_ITEM);
    let total_f = f64::from(total.clamp(0, 48));
    // Water-fill: cap items at 4 and redistribute the excess over the rest.
    let mut quota = [0.0; ITEM_COUNT];
    let mut capped = [false; ITEM_COUNT];
    loop {
        let assigned: f64 = (0..ITEM_COUNT).filter(|&i| capped[i]).map(|_| cap).sum();
        let free_w: f64 = (0..ITEM_COUNT).filter(|&i| !capped[i]).map(|i| weights[i]).sum();
        let remaining = total_f - assigned;
        let mut changed = false;
        for i in 0..ITEM_COUNT {
            quota[i] = if capped[i] { cap } else { remaining * weights[i] / free_w };
            if !capped[i] && quota[i] > cap {
                capped[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut items = [0u8; ITEM_COUNT];
    let mut assigned = 0i32;
    for i in 0..ITEM_COUNT {
        items[i] = quota[i].floor() as u8;
        assigned += i32::from(items[i]);
    }
    let mut order: Vec<usize> = (0..ITEM_COUNT).collect();
    order.sort_by(|&i, &j| {
        let (fi, fj) = (quota[i] - quota[i].floor(), quota[j] - quota[j].floor());
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    let mut left = total.clamp(0, 48) - assigned;
    for &i in order.iter().cycle() {
        if left <= 0 {
            break;
        }
        if items[i] < cohort::MAX_ITEM {
            items[i] += 1;
            left -= 1;
        }
    }
    items
}

pub fn generate_cohort(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let chooser = WeightedIndex::new(spec.archetypes.iter().map(|(_, w)| *w))
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let width = spec.patients.to_string().len().max(4);

    let mut sequences = Vec::with_capacity(spec.patients);
    let mut labels = Vec::with_capacity(spec.patients);
    for p in 0..spec.patients {
        let id = format!("S{:0width$}", p + 1);
        let arch = &spec.archetypes[chooser.sample(&mut rng)].0;
        let curve = SigmoidFit::from_params(
            arch.b.sample(&mut rng),
            arch.m.sample(&mut rng),
            arch.a.sample(&mut rng),
            arch.c.sample(&mut rng),
        );
        let follow_up = arch.follow_up.sample(&mut rng);
        let d50 = curve.d50(DEFAULT_HORIZON_DAYS);
        let death = (d50 + arch.death_offset.sample(&mut rng)).round() as i64;

        let mut days = vec![0i64];
        loop {
            let jitter = if arch.visit_jitter > 0.0 {
                rng.random_range(-arch.visit_jitter..=arch.visit_jitter)
            } else {
                0.0
            };
            let next = *days.last().unwrap() + (arch.visit_interval_mean + jitter).round().max(1.0) as i64;
            let within = (next as f64) <= follow_up && next < death;
            if !within && days.len() >= cohort::MIN_VISITS {
                break;
            }
            days.push(next);
        }

        let item_weights: [f64; ITEM_COUNT] = std::array::from_fn(|_| rng.random_range(0.5..=1.5));
        let mut visits: Vec<Visit> = Vec::with_capacity(days.len());
        for &day in &days {
            let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let mut total = (curve.eval(day as f64) + eps).round().clamp(0.0, 48.0) as i32;
            if let Some(prev) = visits.last() {
                total = total.min(prev.total + MAX_RISE);
            }
            visits.push(Visit {
                day,
                total,
                subscores: Some(allocate_subscores(total, &item_weights)),
            });
        }

        let last_day = *days.last().unwrap();
        let death = death.max(last_day);
        let censored = rng.random_bool(arch.censoring_prob);
        let survival_days = if censored && death > last_day {
            rng.random_range(last_day..=death)
        } else {
            death
        };
        sequences.push(Sequence {
            patient_id: id.clone(),
            visits,
            outcome: PatientOutcome {
                survival_days,
                event_observed: !censored,
                first_contact_day: Some(0),
            },
        });
        labels.push((id, arch.label.clone()));
    }
    Ok(SynthCohort { sequences, labels })
}

/// Serialize the cohort CSVs into memory; used to compare generator runs.
pub fn to_csv_bytes(cohort: &SynthCohort) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut v = Vec::new();
    let mut o = Vec::new();
    cohort::write_visits(&mut v, &cohort.sequences)?;
    cohort::write_outcomes(&mut o, &cohort.sequences)?;
    v.flush().ok();
    Ok((v, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::apply_exclusions;
    use proptest::prelude::*;

    fn noiseless_spec() -> SynthSpec {
        SynthSpec {
            archetypes: vec![(
                ClusterArchetype {
                    label: "ref".into(),
                    b: Range::fixed(48.0),
                    m: Range::fixed(0.02),
                    a: Range::fixed(300.0),
                    c: Range::fixed(0.0),
                    visit_interval_mean: 90.0,
                    visit_jitter: 0.0,
                    follow_up: Range::fixed(540.0),
                    death_offset: Range::fixed(400.0),
                    censoring_prob: 0.0,
                },
                1.0,
            )],
            patients: 3,
            noise_sd: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn noiseless_generator_follows_the_curve() {
        let c = generate_cohort(&noiseless_spec()).unwrap();
        for s in &c.sequences {
            let days: Vec<i64> = s.days().collect();
            assert_eq!(days, vec![0, 90, 180, 270, 360, 450, 540]);
            for v in &s.visits {
                let want = (48.0 / (1.0 + (0.02 * (v.day as f64 - 300.0)).exp())).round() as i32;
                assert_eq!(v.total, want);
            }
            assert_eq!(s.outcome.survival_days, 700);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::three_archetypes(40, 1.0, 5);
        let a = to_csv_bytes(&generate_cohort(&spec).unwrap()).unwrap();
        let b = to_csv_bytes(&generate_cohort(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = to_csv_bytes(&generate_cohort(&SynthSpec { seed: 6, ..spec }).unwrap()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = noiseless_spec();
        spec.archetypes.clear();
        assert!(generate_cohort(&spec).is_err());
        let mut spec = noiseless_spec();
        spec.archetypes[0].1 = 0.5;
        assert!(generate_cohort(&spec).is_err());
        let mut spec = noiseless_spec();
        spec.patients = 0;
        assert!(generate_cohort(&spec).is_err());
    }

    #[test]
    fn generated_cohorts_pass_exclusions_and_labels_align() {
        for noise in [0.0, 0.5, 1.0] {
            let c = generate_cohort(&SynthSpec::four_archetypes(120, noise, 3)).unwrap();
            let ids: Vec<_> = c.sequences.iter().map(|s| &s.patient_id).collect();
            let label_ids: Vec<_> = c.labels.iter().map(|(id, _)| id).collect();
            assert_eq!(ids, label_ids);
            let (kept, report) = apply_exclusions(c.sequences.clone());
            assert_eq!(kept.len(), c.sequences.len(), "{report:?}");
            for s in &c.sequences {
                assert!(s.outcome.survival_days >= s.duration());
                for v in &s.visits {
                    let items = v.subscores.unwrap();
                    assert_eq!(items.iter().map(|&x| i32::from(x)).sum::<i32>(), v.total);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn subscore_allocation_preserves_sum(
            total in 0i32..=48,
            weights in prop::array::uniform12(0.1f64..3.0),
        ) {
            let items = allocate_subscores(total, &weights);
            prop_assert_eq!(items.iter().map(|&x| i32::from(x)).sum::<i32>(), total);
            prop_assert!(items.iter().all(|&x| x <= 4));
        }
    }
}
