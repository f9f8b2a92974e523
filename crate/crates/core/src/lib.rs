//! Clustering of patients by disease-progression similarity.
//!
//! The crate turns irregularly sampled functional-score sequences into a
//! handful of progression features, builds several pairwise distances
//! (Minkowski, cosine and a weak-supervised learned distance), clusters the
//! patients with k-means, k-medoids and complete-linkage agglomerative
//! clustering (optionally after a 2-D manifold embedding), and scores each
//! resulting partition by silhouette and pairwise log-rank survival tests.
//!
//! Each stage is a module that can be used on its own; [`pipeline`] wires
//! them into the full workflow grid.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agreement;
pub mod baselines;
pub mod cluster;
pub mod cohort;
pub mod curves;
pub mod embedding;
mod error;
pub mod evalstats;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod weaksup;

pub use agreement::adjusted_rand_index;
pub use cluster::{Assignment, ClusterMethod};
pub use cohort::{ExclusionReport, PatientId, PatientOutcome, Sequence, Visit};
pub use curves::SigmoidFit;
pub use embedding::{Embedding, EmbeddingParams};
pub use error::{Error, Result};
pub use features::{FeatureSpace, FeatureVector, PairTable};
pub use metrics::{DistanceMatrix, Measure, MetricAudit};
pub use weaksup::{Label, LabelMatrix, LabelModel, WsdWeights};
