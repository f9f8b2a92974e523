use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub values: Vec<f64>,
}

/// Silhouette of a labeling on a distance matrix. Members of singleton
/// clusters score 0. At least two non-empty clusters are required.
pub fn silhouette(d: &DistanceMatrix, labels: &[usize]) -> Result<Silhouette> {
    if labels.len() != d.n {
        return Err(Error::DimensionMismatch {
            expected: d.n,
            got: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two non-empty clusters".into()));
    }
    let values: Vec<f64> = (0..d.n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, &l) in labels.iter().enumerate() {
                if j != i {
                    sums[l] += d.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(Silhouette { mean, std, values })
}
