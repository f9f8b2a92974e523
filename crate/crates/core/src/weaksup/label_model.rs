//! Conditionally independent generative label model fitted by EM.
//!
//! `Y ~ Bernoulli(prior)` with `Y = T` as the positive class. Each labeling
//! function abstains with probability `1 - propensity`; otherwise it emits
//! `Y` with probability `accuracy` and the other class with `1 - accuracy`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Label, LabelMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub init_prior: f64,
    pub init_accuracy: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 100,
            tol: 1e-6,
            init_prior: 0.5,
            init_accuracy: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    /// P(Y = T).
    pub prior: f64,
    /// P(function j does not abstain).
    pub propensity: Vec<f64>,
    /// P(vote = Y | function j does not abstain).
    pub accuracy: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// The fitted labels were flipped to put the mean accuracy at or above 0.5.
    pub flipped: bool,
}

impl LabelModel {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// P(Y = T | votes). `None` when every function abstains.
    pub fn posterior(&self, votes: &[Label]) -> Option<f64> {
        let (t, s) = class_likelihoods(&self.accuracy, votes);
        if votes.iter().all(|&v| v == Label::U) {
            return None;
        }
        let a = self.prior * t;
        let b = (1.0 - self.prior) * s;
        Some(if a + b > 0.0 { a / (a + b) } else { 0.5 })
    }
}

/// Likelihood of the non-abstaining votes under Y = T and Y = S.
fn class_likelihoods(accuracy: &[f64], votes: &[Label]) -> (f64, f64) {
    let (mut t, mut s) = (1.0, 1.0);
    for (&v, &acc) in votes.iter().zip(accuracy) {
        match v {
            Label::T => {
                t *= acc;
                s *= 1.0 - acc;
            }
            Label::S => {
                t *= 1.0 - acc;
                s *= acc;
            }
            Label::U => {}
        }
    }
    (t, s)
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Distinct vote patterns with multiplicities, in a fixed order.
fn compress(lm: &LabelMatrix) -> Vec<(Vec<Label>, f64)> {
    let mut counts: BTreeMap<&[Label], usize> = BTreeMap::new();
    for r in 0..lm.rows {
        *counts.entry(lm.row(r)).or_default() += 1;
    }
    counts.into_iter().map(|(p, c)| (p.to_vec(), c as f64)).collect()
}

/// Observed-data log-likelihood, propensity terms included.
pub fn log_likelihood(
    patterns: &[(Vec<Label>, f64)],
    prior: f64,
    propensity: &[f64],
    accuracy: &[f64],
) -> f64 {
    let mut ll = 0.0;
    for (votes, count) in patterns {
        let (t, s) = class_likelihoods(accuracy, votes);
        ll += xlogy(*count, prior * t + (1.0 - prior) * s);
        for (&v, &p) in votes.iter().zip(propensity) {
            ll += if v == Label::U {
                xlogy(*count, 1.0 - p)
            } else {
                xlogy(*count, p)
            };
        }
    }
    ll
}

pub fn fit_label_model(lm: &LabelMatrix, opts: EmOptions) -> Result<LabelModel> {
    let k = lm.n_functions();
    if lm.votes.iter().all(|&v| v == Label::U) {
        return Err(Error::NoSignal);
    }
    let patterns = compress(lm);
    let n = lm.rows as f64;
    let voting: Vec<f64> = (0..k)
        .map(|j| {
            patterns
                .iter()
                .filter(|(p, _)| p[j] != Label::U)
                .map(|(_, c)| c)
                .sum()
        })
        .collect();
    let propensity: Vec<f64> = voting.iter().map(|&v| v / n).collect();
    let mut prior = opts.init_prior;
    let mut accuracy = vec![opts.init_accuracy; k];
    let mut trace = vec![log_likelihood(&patterns, prior, &propensity, &accuracy)];
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        // E-step: posterior of Y = T per pattern.
        let mut mass_t = 0.0;
        let mut correct = vec![0.0; k];
        for (votes, count) in &patterns {
            let (t, s) = class_likelihoods(&accuracy, votes);
            let (a, b) = (prior * t, (1.0 - prior) * s);
            let g = if a + b > 0.0 { a / (a + b) } else { prior };
            mass_t += count * g;
            for j in 0..k {
                match votes[j] {
                    Label::T => correct[j] += count * g,
                    Label::S => correct[j] += count * (1.0 - g),
                    Label::U => {}
                }
            }
        }
        // M-step.
        let new_prior = mass_t / n;
        let new_accuracy: Vec<f64> = (0..k)
            .map(|j| if voting[j] > 0.0 { correct[j] / voting[j] } else { accuracy[j] })
            .collect();
        let delta = new_accuracy
            .iter()
            .zip(&accuracy)
            .map(|(a, b)| (a - b).abs())
            .fold((new_prior - prior).abs(), f64::max);
        prior = new_prior;
        accuracy = new_accuracy;
        let ll = log_likelihood(&patterns, prior, &propensity, &accuracy);
        debug_assert!(
            ll >= trace.last().unwrap() - 1e-9 * trace.last().unwrap().abs().max(1.0),
            "EM log-likelihood decreased: {} -> {ll}",
            trace.last().unwrap()
        );
        trace.push(ll);
        if delta < opts.tol {
            break;
        }
    }

    // Resolve label switching: the mean accuracy over votes cast must be >= 0.5.
    let cast: f64 = voting.iter().sum();
    let mean_acc = accuracy.iter().zip(&voting).map(|(a, v)| a * v).sum::<f64>() / cast;
    let flipped = mean_acc < 0.5;
    if flipped {
        prior = 1.0 - prior;
        for a in &mut accuracy {
            *a = 1.0 - *a;
        }
    }
    Ok(LabelModel {
        prior,
        propensity,
        accuracy,
        log_likelihood: trace,
        iterations,
        flipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub label: Label,
    /// P(Y = T | votes); the prior when every function abstained.
    pub posterior: f64,
}

/// Highest-probability label per pair; exact ties and all-abstain rows give U.
pub fn infer_labels(model: &LabelModel, lm: &LabelMatrix) -> Vec<PairLabel> {
    (0..lm.rows)
        .map(|r| match model.posterior(lm.row(r)) {
            None => PairLabel {
                label: Label::U,
                posterior: model.prior,
            },
            Some(p) => PairLabel {
                label: if p > 0.5 {
                    Label::T
                } else if p < 0.5 {
                    Label::S
                } else {
                    Label::U
                },
                posterior: p,
            },
        })
        .collect()
}
