//! Shared fixtures for the criterion benchmarks.

use progclust_core::metrics::MatrixKind;
use progclust_core::synth::{generate_cohort, SynthSpec};
use progclust_core::{DistanceMatrix, Sequence};

/// Planted three-archetype cohort of `n` patients.
pub fn cohort(n: usize, seed: u64) -> Vec<Sequence> {
    generate_cohort(&SynthSpec::three_archetypes(n, 1.0, seed))
        .expect("valid synthetic spec")
        .sequences
}

/// Euclidean matrix over `n` deterministic points on a spiral.
pub fn spiral_matrix(n: usize) -> DistanceMatrix {
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 * 0.37;
            [t.cos() * (1.0 + t), t.sin() * (1.0 + t)]
        })
        .collect();
    DistanceMatrix::euclidean((0..n).map(|i| format!("P{i:04}")).collect(), &pts, MatrixKind::Custom)
}
