use serde::{Deserialize, Serialize};

use super::gamma::chi2_sf;
use crate::cluster::Assignment;
use crate::error::{Error, Result};

/// Product-limit step function. Knot `i` holds the survival probability from
/// `times[i]` until the next knot; the first knot is `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl SurvivalCurve {
    /// Survival probability at time `t` (right-continuous).
    pub fn at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }
}

/// Sorted distinct event times with (events, at risk) per group; censored
/// subjects stay at risk through their own time.
fn event_table(groups: &[&[(f64, bool)]]) -> Vec<(f64, Vec<usize>, Vec<usize>)> {
    let mut times: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.iter().filter(|s| s.1).map(|s| s.0))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let d = groups.iter().map(|g| g.iter().filter(|s| s.1 && s.0 == t).count()).collect();
            let n = groups.iter().map(|g| g.iter().filter(|s| s.0 >= t).count()).collect();
            (t, d, n)
        })
        .collect()
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("Kaplan-Meier needs at least one subject".into()));
    }
    if times.len() != events.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: events.len(),
        });
    }
    if times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::InvalidArgument("survival times must be >= 0".into()));
    }
    let subjects: Vec<(f64, bool)> = times.iter().copied().zip(events.iter().copied()).collect();
    let mut curve = SurvivalCurve {
        times: vec![0.0],
        survival: vec![1.0],
        at_risk: vec![times.len()],
        events: vec![0],
    };
    let mut s = 1.0;
    for (t, d, n) in event_table(&[&subjects]) {
        s *= 1.0 - d[0] as f64 / n[0] as f64;
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n[0]);
        curve.events.push(d[0]);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Observed and expected events of the first group.
    pub observed: f64,
    pub expected: f64,
    pub variance: f64,
}

/// Two-sample log-rank test with hypergeometric variance; each subject is
/// `(time, event observed)`.
pub fn logrank_pair(g1: &[(f64, bool)], g2: &[(f64, bool)]) -> Result<LogRankResult> {
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::InvalidArgument("log-rank needs two non-empty groups".into()));
    }
    let (mut o, mut e, mut v) = (0.0, 0.0, 0.0);
    for (_, d, n) in event_table(&[g1, g2]) {
        let dj = (d[0] + d[1]) as f64;
        let nj = (n[0] + n[1]) as f64;
        let share = n[0] as f64 / nj;
        o += d[0] as f64;
        e += dj * share;
        if nj > 1.0 {
            v += dj * share * (1.0 - share) * (nj - dj) / (nj - 1.0);
        }
    }
    if v <= 0.0 {
        return Ok(LogRankResult {
            statistic: 0.0,
            p_value: 1.0,
            observed: o,
            expected: e,
            variance: 0.0,
        });
    }
    let statistic = (o - e) * (o - e) / v;
    Ok(LogRankResult {
        statistic,
        p_value: chi2_sf(statistic, 1.0),
        observed: o,
        expected: e,
        variance: v,
    })
}

/// Worst-case survival separation over all pairs of non-empty clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub p_max: f64,
    pub lrs_min: f64,
    pub pairs: Vec<(usize, usize, LogRankResult)>,
}

/// `None` when fewer than two clusters are occupied.
pub fn survival_separation(asg: &Assignment, outcomes: &[(f64, bool)]) -> Result<Option<Separation>> {
    if outcomes.len() != asg.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: asg.labels.len(),
            got: outcomes.len(),
        });
    }
    let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); asg.k];
    for (&l, &o) in asg.labels.iter().zip(outcomes) {
        groups[l].push(o);
    }
    let occupied: Vec<usize> = (0..asg.k).filter(|&c| !groups[c].is_empty()).collect();
    if occupied.len() < 2 {
        return Ok(None);
    }
    let mut pairs = Vec::new();
    for (x, &a) in occupied.iter().enumerate() {
        for &b in &occupied[x + 1..] {
            pairs.push((a, b, logrank_pair(&groups[a], &groups[b])?));
        }
    }
    let p_max = pairs.iter().map(|p| p.2.p_value).fold(f64::NEG_INFINITY, f64::max);
    let lrs_min = pairs.iter().map(|p| p.2.statistic).fold(f64::INFINITY, f64::min);
    Ok(Some(Separation { p_max, lrs_min, pairs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterMethod;
    use rand::Rng;

    #[test]
    fn uncensored_empirical_survival() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_eq!(c.times, vec![0.0, 1.0, 2.0, 3.0]);
        assert!((c.at(1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.at(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.at(3.0), 0.0);
        assert_eq!(c.at(0.5), 1.0);
    }

    #[test]
    fn all_censored_stays_at_one() {
        let c = kaplan_meier(&[1.0, 5.0], &[false, false]).unwrap();
        assert_eq!(c.survival, vec![1.0]);
    }

    #[test]
    fn mixed_six_subjects() {
        // Times 2, 3+, 4, 4, 5+, 7 (+ = censored).
        // t=2: 6 at risk, 1 event -> 5/6; t=4: 4 at risk, 2 events -> 5/6 * 2/4;
        // t=7: 1 at risk, 1 event -> 0.
        let c = kaplan_meier(&[2.0, 3.0, 4.0, 4.0, 5.0, 7.0], &[true, false, true, true, false, true]).unwrap();
        assert_eq!(c.times, vec![0.0, 2.0, 4.0, 7.0]);
        assert_eq!(c.at_risk, vec![6, 6, 4, 1]);
        let expected = [1.0, 5.0 / 6.0, 5.0 / 12.0, 0.0];
        for (s, e) in c.survival.iter().zip(expected) {
            assert!((s - e).abs() < 1e-15);
        }
    }

    #[test]
    fn event_before_censoring_at_same_time() {
        let c = kaplan_meier(&[3.0, 3.0], &[true, false]).unwrap();
        assert_eq!(c.at_risk[1], 2);
        assert!((c.survival[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_groups_have_no_difference() {
        let g = [(1.0, true), (3.0, false), (4.0, true), (9.0, true)];
        let r = logrank_pair(&g, &g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn no_events_gives_unit_p() {
        let r = logrank_pair(&[(1.0, false)], &[(2.0, false)]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    fn random_group(rng: &mut crate::seed::Rng, n: usize, scale: f64) -> Vec<(f64, bool)> {
        (0..n)
            .map(|_| ((rng.random::<f64>() * scale).round(), rng.random::<f64>() < 0.8))
            .collect()
    }

    #[test]
    fn invariant_to_swap_and_time_rescaling() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..20 {
            let a = random_group(&mut rng, 15, 50.0);
            let b = random_group(&mut rng, 12, 80.0);
            let r = logrank_pair(&a, &b).unwrap();
            let s = logrank_pair(&b, &a).unwrap();
            assert!((r.statistic - s.statistic).abs() < 1e-12 * r.statistic.max(1.0));
            let scale = |g: &[(f64, bool)]| g.iter().map(|&(t, e)| (t * 3.5, e)).collect::<Vec<_>>();
            let t = logrank_pair(&scale(&a), &scale(&b)).unwrap();
            assert!((r.statistic - t.statistic).abs() < 1e-12 * r.statistic.max(1.0));
        }
    }

    #[test]
    fn separation_reports_worst_pair() {
        let mut rng = crate::seed::rng(22);
        let mut outcomes = Vec::new();
        let mut labels = Vec::new();
        for (c, scale) in [(0, 100.0), (1, 100.0), (2, 1000.0)] {
            for _ in 0..60 {
                outcomes.push(((rng.random::<f64>() * scale).round() + 1.0, true));
                labels.push(c);
            }
        }
        let asg = Assignment::canonical(&labels, 3, ClusterMethod::Ahc, 0.0);
        let sep = survival_separation(&asg, &outcomes).unwrap().unwrap();
        assert_eq!(sep.pairs.len(), 3);
        let shared = sep.pairs.iter().find(|p| (p.0, p.1) == (0, 1)).unwrap().2;
        assert_eq!(sep.p_max, shared.p_value);
        assert_eq!(sep.lrs_min, shared.statistic);
    }

    #[test]
    fn single_occupied_cluster_has_no_separation() {
        let asg = Assignment {
            labels: vec![1, 1],
            k: 2,
            method: ClusterMethod::Threshold,
            objective: 0.0,
        };
        assert!(survival_separation(&asg, &[(1.0, true), (2.0, true)]).unwrap().is_none());
    }
}
