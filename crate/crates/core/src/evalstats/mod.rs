//! Partition quality: silhouette, Kaplan-Meier survival curves and
//! pairwise log-rank tests.

mod gamma;
mod silhouette;
mod survival;

pub use gamma::{chi2_sf, ln_gamma, regularized_gamma_q};
pub use silhouette::{silhouette, Silhouette};
pub use survival::{kaplan_meier, logrank_pair, survival_separation, LogRankResult, Separation, SurvivalCurve};
