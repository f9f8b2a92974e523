//! L2-regularized hinge-loss linear SVM solved by dual coordinate descent.
//!
//! The bias is handled by appending a constant 1 feature, so it is
//! regularized together with the weights. Classes: S -> +1, T -> -1.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Label, PairLabel};
use crate::error::{Error, Result};
use crate::features::{PairTable, DESCRIPTIVE_NAMES};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    /// Stop once `(primal - dual) / max(1, primal)` falls below this.
    pub gap_tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: 1.0,
            gap_tol: 1e-6,
            max_passes: 100_000,
            seed: 0,
        }
    }
}

/// Weights of the learned distance, one per retained descriptive variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsdWeights {
    pub columns: Vec<usize>,
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    /// Trained with the classifier, not part of the distance.
    pub intercept: f64,
    pub c: f64,
    pub passes: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub converged: bool,
    pub training_pairs: usize,
}

impl WsdWeights {
    /// Weighted sum of descriptive variables (indexed like `weights`).
    pub fn distance(&self, descriptive: &[f64]) -> f64 {
        self.weights.iter().zip(descriptive).map(|(w, d)| w * d).sum()
    }

    pub fn decision(&self, descriptive: &[f64]) -> f64 {
        self.distance(descriptive) + self.intercept
    }
}

struct Problem {
    dim: usize,
    /// Row-major, each row augmented with a trailing 1.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Problem {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objectives(p: &Problem, w: &[f64], alpha: &[f64], c: f64) -> (f64, f64) {
    let half_norm = 0.5 * dot(w, w);
    let hinge: f64 = (0..p.y.len())
        .map(|i| (1.0 - p.y[i] * dot(w, p.row(i))).max(0.0))
        .sum();
    (half_norm + c * hinge, alpha.iter().sum::<f64>() - half_norm)
}

/// Core solver on explicit rows; returns (w incl. bias, passes, primal, dual, converged).
fn solve(p: &Problem, opts: &SvmOptions) -> (Vec<f64>, usize, f64, f64, bool) {
    let n = p.y.len();
    let c = opts.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; p.dim];
    let qd: Vec<f64> = (0..n).map(|i| dot(p.row(i), p.row(i))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(opts.seed);
    let (mut primal, mut dual) = objectives(p, &w, &alpha, c);
    let mut passes = 0;
    let mut converged = false;

    while passes < opts.max_passes {
        passes += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let xi = p.row(i);
            let g = p.y[i] * dot(&w, xi) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * p.y[i];
                for (wk, xk) in w.iter_mut().zip(xi) {
                    *wk += step * xk;
                }
            }
        }
        (primal, dual) = objectives(p, &w, &alpha, c);
        if (primal - dual) / primal.max(1.0) < opts.gap_tol {
            converged = true;
            break;
        }
    }
    (w, passes, primal, dual, converged)
}

/// Train on pairs labeled T or S; U pairs are skipped.
pub fn train_wsd(table: &PairTable, labels: &[PairLabel], opts: &SvmOptions) -> Result<WsdWeights> {
    if labels.len() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            got: labels.len(),
        });
    }
    let columns = table.retained_columns();
    let dim = columns.len() + 1;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, lab) in table.normalized.iter().zip(labels) {
        let target = match lab.label {
            Label::S => 1.0,
            Label::T => -1.0,
            Label::U => continue,
        };
        x.extend(columns.iter().map(|&c| row[c]));
        x.push(1.0);
        y.push(target);
    }
    if !y.iter().any(|&v| v > 0.0) {
        return Err(Error::SingleClass("T"));
    }
    if !y.iter().any(|&v| v < 0.0) {
        return Err(Error::SingleClass("S"));
    }
    let problem = Problem { dim, x, y };
    let (w, passes, primal, dual, converged) = solve(&problem, opts);
    if !converged {
        log::warn!(
            "SVM stopped after {passes} passes with duality gap {:.3e}",
            primal - dual
        );
    }
    Ok(WsdWeights {
        names: columns.iter().map(|&c| DESCRIPTIVE_NAMES[c].to_string()).collect(),
        columns,
        weights: w[..dim - 1].to_vec(),
        intercept: w[dim - 1],
        c: opts.c,
        passes,
        primal,
        dual,
        gap: primal - dual,
        converged,
        training_pairs: problem.y.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureVector, FEATURE_COUNT};
    use rand::Rng;

    /// Pairs whose separation is decided by descriptive variable 3.
    fn planted_table(n_pairs: usize, seed: u64) -> (PairTable, Vec<PairLabel>) {
        let mut rng = crate::seed::rng(seed);
        let mut rows = Vec::with_capacity(n_pairs);
        let mut labels = Vec::with_capacity(n_pairs);
        while rows.len() < n_pairs {
            let r: [f64; FEATURE_COUNT] = std::array::from_fn(|_| rng.random());
            if (0.4..=0.6).contains(&r[2]) {
                continue;
            }
            labels.push(PairLabel {
                label: if r[2] > 0.5 { Label::S } else { Label::T },
                posterior: 0.0,
            });
            rows.push(r);
        }
        // Shape a table directly around the rows.
        let ids = vec!["a".to_string(), "b".to_string()];
        let mut t = crate::features::pairwise_table(&ids, &[FeatureVector::from_array([0.0; 7]); 2]).unwrap();
        t.pairs = vec![(0, 1); n_pairs];
        t.raw = rows.clone();
        t.normalized = rows;
        (t, labels)
    }

    #[test]
    fn planted_rule_is_learned() {
        let (t, labels) = planted_table(2000, 5);
        let w = train_wsd(&t, &labels, &SvmOptions::default()).unwrap();
        assert!(w.converged, "gap {}", w.gap);
        let argmax = (0..w.weights.len())
            .max_by(|&a, &b| w.weights[a].abs().total_cmp(&w.weights[b].abs()))
            .unwrap();
        assert_eq!(argmax, 2);
        assert!(w.weights[2] > 0.0);
        let correct = t
            .normalized
            .iter()
            .zip(&labels)
            .filter(|(r, l)| (w.decision(&r[..]) > 0.0) == (l.label == Label::S))
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn undetermined_pairs_are_ignored() {
        let (t, mut labels) = planted_table(500, 6);
        let base = train_wsd(&t, &labels, &SvmOptions::default()).unwrap();
        // Append pairs labeled U carrying contradicting values.
        let mut t2 = t.clone();
        for i in 0..100 {
            let mut r = t.normalized[i];
            r[2] = 1.0 - r[2];
            t2.normalized.push(r);
            t2.raw.push(r);
            t2.pairs.push((0, 1));
            labels.push(PairLabel {
                label: Label::U,
                posterior: 0.5,
            });
        }
        let before: Vec<Label> = labels.iter().map(|l| l.label).collect();
        let with_u = train_wsd(&t2, &labels, &SvmOptions::default()).unwrap();
        assert_eq!(base.weights, with_u.weights);
        assert_eq!(before, labels.iter().map(|l| l.label).collect::<Vec<_>>());
    }

    #[test]
    fn single_class_is_rejected() {
        let (t, labels) = planted_table(50, 7);
        let all_t: Vec<PairLabel> = labels
            .iter()
            .map(|l| PairLabel {
                label: if l.label == Label::S { Label::U } else { l.label },
                ..*l
            })
            .collect();
        assert!(matches!(train_wsd(&t, &all_t, &SvmOptions::default()), Err(Error::SingleClass(_))));
    }

    #[test]
    fn wsd_of_identical_patients_is_zero() {
        let (t, labels) = planted_table(300, 8);
        let w = train_wsd(&t, &labels, &SvmOptions::default()).unwrap();
        assert_eq!(w.distance(&[0.0; 7]), 0.0);
    }
}
