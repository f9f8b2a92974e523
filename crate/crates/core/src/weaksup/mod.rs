//! Weak supervision over patient pairs.
//!
//! Quartile labeling functions vote on every pair, a generative label model
//! fitted by EM turns the votes into a posterior label, and a linear
//! hinge-loss classifier trained on the confident pairs yields the weights
//! of the learned distance.

mod label_model;
mod labeling;
mod svm;

pub use label_model::{fit_label_model, infer_labels, EmOptions, LabelModel, PairLabel};
pub use labeling::{apply_labeling_functions, LabelMatrix};
pub use svm::{train_wsd, SvmOptions, WsdWeights};

use serde::{Deserialize, Serialize};

/// Vote of one labeling function on a pair, or the final label of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Grouped together.
    T,
    /// Separated.
    S,
    /// Undetermined (abstain).
    U,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::T => "T",
            Label::S => "S",
            Label::U => "U",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
