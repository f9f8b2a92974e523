//! Four-parameter decreasing sigmoid `b / (1 + exp(m (x - a))) + c` fitted to
//! a score sequence by damped least squares.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cohort::Sequence;
use crate::seed;

pub const DEFAULT_RESTARTS: usize = 16;
pub const DEFAULT_HORIZON_DAYS: f64 = 3650.0;
/// Half of the maximum functional score.
pub const HALF_SCORE: f64 = 24.0;

const MAX_ITERATIONS: usize = 200;
const REL_COST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub b: f64,
    pub m: f64,
    pub a: f64,
    pub c: f64,
    pub rmse: f64,
    pub converged: bool,
    pub restart_index: usize,
}

impl SigmoidFit {
    pub fn from_params(b: f64, m: f64, a: f64, c: f64) -> Self {
        SigmoidFit {
            b,
            m,
            a,
            c,
            rmse: 0.0,
            converged: true,
            restart_index: 0,
        }
    }

    /// Estimated score at `day`.
    pub fn eval(&self, day: f64) -> f64 {
        sigmoid(day, [self.b, self.m, self.a, self.c])
    }

    /// The curve rises over time (possible under noise).
    pub fn is_increasing(&self) -> bool {
        self.b * self.m < 0.0
    }

    /// Day at which the curve first reaches `target`, clamped to `[0, horizon]`.
    ///
    /// Curves that start at or below the target give 0; curves that never
    /// get down to it within the horizon give `horizon`.
    pub fn invert_for_score(&self, target: f64, horizon: f64) -> f64 {
        if self.eval(0.0) <= target {
            return 0.0;
        }
        if self.b * self.m > 0.0 {
            let ratio = self.b / (target - self.c);
            if ratio > 1.0 {
                let day = self.a + (ratio - 1.0).ln() / self.m;
                if day.is_finite() {
                    return day.clamp(0.0, horizon);
                }
            }
        }
        horizon
    }

    /// D50: day at which the fitted score halves to 24.
    pub fn d50(&self, horizon: f64) -> f64 {
        self.invert_for_score(HALF_SCORE, horizon)
    }
}

#[inline]
fn sigmoid(x: f64, [b, m, a, c]: [f64; 4]) -> f64 {
    b / (1.0 + (m * (x - a)).exp()) + c
}

/// Residuals and Jacobian rows (d/db, d/dm, d/da, d/dc).
fn residuals_and_jacobian(
    days: &[f64],
    scores: &[f64],
    p: [f64; 4],
    res: &mut [f64],
    jac: &mut [[f64; 4]],
) {
    let [b, m, a, _] = p;
    for i in 0..days.len() {
        let x = days[i];
        let eu = (m * (x - a)).exp();
        let g = 1.0 / (1.0 + eu);
        // e^u / (1+e^u)^2 written as g * (1 - g) to stay finite for large u.
        let gp = g * (1.0 - g);
        res[i] = sigmoid(x, p) - scores[i];
        jac[i] = [g, -b * (x - a) * gp, b * m * gp, 1.0];
    }
}

fn cost(days: &[f64], scores: &[f64], p: [f64; 4]) -> f64 {
    days.iter()
        .zip(scores)
        .map(|(&x, &s)| {
            let r = sigmoid(x, p) - s;
            r * r
        })
        .sum()
}

/// Solve the symmetric 4x4 system `a x = rhs` by Gaussian elimination with
/// partial pivoting. Returns `None` when singular.
fn solve4(mut a: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut s = rhs[row];
        for k in row + 1..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Debug, Clone, Copy)]
struct LocalFit {
    params: [f64; 4],
    cost: f64,
    converged: bool,
}

/// Levenberg–Marquardt from one starting point.
fn levenberg_marquardt(days: &[f64], scores: &[f64], start: [f64; 4]) -> LocalFit {
    let n = days.len();
    let mut p = start;
    let mut cur = cost(days, scores, p);
    let mut lambda = 1e-3;
    let mut res = vec![0.0; n];
    let mut jac = vec![[0.0; 4]; n];
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        if cur == 0.0 {
            converged = true;
            break;
        }
        residuals_and_jacobian(days, scores, p, &mut res, &mut jac);
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for i in 0..n {
            for r in 0..4 {
                jtr[r] += jac[i][r] * res[i];
                for c in 0..4 {
                    jtj[r][c] += jac[i][r] * jac[i][c];
                }
            }
        }

        // Try increasingly damped steps until one lowers the cost.
        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = jtj;
            for (d, row) in damped.iter_mut().enumerate() {
                row[d] += lambda * jtj[d][d].max(1e-12);
            }
            let step = solve4(damped, jtr.map(|g| -g));
            if let Some(step) = step {
                let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
                let tc = cost(days, scores, trial);
                if tc.is_finite() && tc <= cur {
                    accepted = Some((trial, tc));
                    lambda = (lambda * 0.3).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        match accepted {
            Some((trial, tc)) => {
                let rel = (cur - tc) / cur.max(f64::MIN_POSITIVE);
                p = trial;
                cur = tc;
                if rel < REL_COST_TOL {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent direction left at any damping: local minimum.
                converged = true;
                break;
            }
        }
    }
    LocalFit {
        params: p,
        cost: cur,
        converged,
    }
}

/// Fit real-valued points. Points are sorted by day internally.
pub fn fit_points(days: &[f64], scores: &[f64], restarts: usize, seed: u64) -> SigmoidFit {
    assert_eq!(days.len(), scores.len(), "days and scores differ in length");
    assert!(!days.is_empty(), "cannot fit an empty sequence");
    let mut order: Vec<usize> = (0..days.len()).collect();
    order.sort_by(|&i, &j| days[i].total_cmp(&days[j]).then(scores[i].total_cmp(&scores[j])));
    let days: Vec<f64> = order.iter().map(|&i| days[i]).collect();
    let scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let n = days.len();

    if scores.iter().all(|&s| s == scores[0]) {
        return SigmoidFit {
            b: 0.0,
            m: 0.0,
            a: 0.0,
            c: scores[0],
            rmse: 0.0,
            converged: true,
            restart_index: 0,
        };
    }

    let (first, last) = (scores[0], scores[n - 1]);
    let init = [first - last, 0.01, 0.5 * (days[0] + days[n - 1]), last];
    let mut rng = seed::rng(seed);
    let mut best: Option<(usize, LocalFit)> = None;
    for r in 0..restarts.max(1) {
        let start = if r == 0 {
            init
        } else {
            let (lo, hi) = (0.5f64.ln(), 2.0f64.ln());
            init.map(|v| v * rng.random_range(lo..=hi).exp())
        };
        let fit = levenberg_marquardt(&days, &scores, start);
        if best.as_ref().is_none_or(|(_, b)| fit.cost < b.cost) {
            best = Some((r, fit));
        }
    }
    let (restart_index, fit) = best.expect("at least one restart");
    let [b, m, a, c] = fit.params;
    SigmoidFit {
        b,
        m,
        a,
        c,
        rmse: (fit.cost / n as f64).sqrt(),
        converged: fit.converged,
        restart_index,
    }
}

/// Fit a patient's sequence; the RNG stream is keyed by patient id.
pub fn fit_sigmoid(seq: &Sequence, restarts: usize, global_seed: u64) -> SigmoidFit {
    let days: Vec<f64> = seq.days().map(|d| d as f64).collect();
    let scores: Vec<f64> = seq.scores().map(f64::from).collect();
    fit_points(&days, &scores, restarts, seed::derive(global_seed, &seq.patient_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REF: [f64; 4] = [48.0, 0.02, 300.0, 0.0];

    fn reference() -> SigmoidFit {
        SigmoidFit::from_params(REF[0], REF[1], REF[2], REF[3])
    }

    #[test]
    fn eval_identities() {
        let f = reference();
        assert_eq!(f.eval(300.0), 24.0);
        assert!((f.eval(1e6) - 0.0).abs() < 1e-12);
        let g = SigmoidFit::from_params(10.0, 0.05, 100.0, 7.0);
        assert_eq!(g.eval(100.0), 12.0);
        assert!(g.eval(1e308).is_finite() && g.eval(-1e308).is_finite());
    }

    #[test]
    fn inversion_cases() {
        let f = reference();
        assert!((f.d50(DEFAULT_HORIZON_DAYS) - 300.0).abs() < 1e-9);
        let high = SigmoidFit::from_params(18.0, 0.02, 300.0, 30.0);
        assert_eq!(high.d50(3650.0), 3650.0);
        let low_start = SigmoidFit::from_params(20.0, 0.02, 300.0, 0.0);
        assert_eq!(low_start.d50(3650.0), 0.0);
        let slow = SigmoidFit::from_params(48.0, 0.001, 5000.0, 0.0);
        assert_eq!(slow.d50(3650.0), 3650.0);
        let rising = SigmoidFit::from_params(-10.0, 0.02, 300.0, 40.0);
        assert!(rising.is_increasing());
        assert_eq!(rising.d50(3650.0), 3650.0);
    }

    #[test]
    fn noiseless_recovery() {
        let f = reference();
        let days: Vec<f64> = (0..=6).map(|i| 90.0 * i as f64).collect();
        let scores: Vec<f64> = days.iter().map(|&d| f.eval(d)).collect();
        let fit = fit_points(&days, &scores, DEFAULT_RESTARTS, 1);
        assert!(fit.rmse < 1e-3, "rmse {}", fit.rmse);
        let pred_rmse = (days
            .iter()
            .map(|&d| (fit.eval(d) - f.eval(d)).powi(2))
            .sum::<f64>()
            / days.len() as f64)
            .sqrt();
        assert!(pred_rmse < 1e-3);
    }

    #[test]
    fn constant_sequence_is_flat() {
        let days = [0.0, 90.0, 180.0, 270.0, 360.0];
        let fit = fit_points(&days, &[48.0; 5], 4, 0);
        assert_eq!((fit.b, fit.c, fit.rmse), (0.0, 48.0, 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn restarts_are_monotone() {
        let days = [0.0, 70.0, 160.0, 250.0, 330.0, 420.0, 500.0];
        let scores = [45.0, 44.0, 41.0, 35.0, 30.0, 28.0, 27.0];
        let mut prev = f64::INFINITY;
        for r in 1..=12 {
            let fit = fit_points(&days, &scores, r, 99);
            assert!(fit.rmse <= prev + 1e-15, "restarts {r}: {} > {prev}", fit.rmse);
            prev = fit.rmse;
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let days = [0.0, 50.0, 250.0, 400.0];
        let scores = [0.0; 4];
        let p = [40.0, 0.015, 220.0, 3.0];
        let mut res = [0.0; 4];
        let mut jac = [[0.0; 4]; 4];
        residuals_and_jacobian(&days, &scores, p, &mut res, &mut jac);
        for k in 0..4 {
            let h = 1e-6 * p[k].abs().max(1e-3);
            let (mut hi, mut lo) = (p, p);
            hi[k] += h;
            lo[k] -= h;
            for (i, &x) in days.iter().enumerate() {
                let fd = (sigmoid(x, hi) - sigmoid(x, lo)) / (2.0 * h);
                assert!((fd - jac[i][k]).abs() < 1e-6 * fd.abs().max(1.0), "param {k} day {x}");
            }
        }
    }

    proptest! {
        #[test]
        fn inversion_round_trip(
            b in 5.0f64..48.0, m in 0.002f64..0.1, a in 0.0f64..1500.0, c in 0.0f64..20.0,
            target in 1.0f64..47.0,
        ) {
            let f = SigmoidFit::from_params(b, m, a, c);
            let d = f.invert_for_score(target, 1e6);
            if d > 0.0 && d < 1e6 {
                prop_assert!((f.eval(d) - target).abs() < 1e-9);
            }
        }

        #[test]
        fn fit_ignores_visit_order(shift in 0usize..7) {
            let days = [0.0, 70.0, 160.0, 250.0, 330.0, 420.0, 500.0];
            let scores = [45.0, 44.0, 41.0, 35.0, 30.0, 28.0, 27.0];
            let mut d2 = days.to_vec();
            let mut s2 = scores.to_vec();
            d2.rotate_left(shift);
            s2.rotate_left(shift);
            let a = fit_points(&days, &scores, 4, 5);
            let b = fit_points(&d2, &s2, 4, 5);
            prop_assert_eq!(a, b);
        }
    }
}
