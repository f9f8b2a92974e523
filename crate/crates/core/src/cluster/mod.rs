//! k-means on embeddings, PAM k-medoids and complete-linkage agglomerative
//! clustering on distance matrices.

mod ahc;
mod kmeans;
mod pam;

pub use ahc::{ahc_complete, Dendrogram, Merge};
pub use kmeans::kmeans;
pub use pam::{kmedoids, Medoids};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterMethod {
    #[serde(rename = "KME")]
    KMeans,
    #[serde(rename = "KMD")]
    KMedoids,
    #[serde(rename = "AHC")]
    Ahc,
    /// Fixed-threshold strata of the reference rules.
    #[serde(rename = "THR")]
    Threshold,
}

impl ClusterMethod {
    pub const GRID: [ClusterMethod; 3] = [ClusterMethod::KMeans, ClusterMethod::KMedoids, ClusterMethod::Ahc];

    pub fn tag(self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "KME",
            ClusterMethod::KMedoids => "KMD",
            ClusterMethod::Ahc => "AHC",
            ClusterMethod::Threshold => "THR",
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KME" => Ok(ClusterMethod::KMeans),
            "KMD" => Ok(ClusterMethod::KMedoids),
            "AHC" => Ok(ClusterMethod::Ahc),
            "THR" => Ok(ClusterMethod::Threshold),
            other => Err(Error::InvalidArgument(format!("unknown clustering method {other:?}"))),
        }
    }
}

/// Cluster id per patient, in the order of the clustered input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub method: ClusterMethod,
    /// Inertia (KME), total medoid cost (KMD), height of the last applied
    /// merge (AHC); unused for threshold strata.
    pub objective: f64,
}

impl Assignment {
    /// Relabels clusters in order of first appearance so equal partitions
    /// compare equal.
    pub fn canonical(labels: &[usize], k: usize, method: ClusterMethod, objective: f64) -> Self {
        let mut map = vec![usize::MAX; k];
        let mut next = 0;
        let labels = labels
            .iter()
            .map(|&l| {
                if map[l] == usize::MAX {
                    map[l] = next;
                    next += 1;
                }
                map[l]
            })
            .collect();
        Assignment {
            labels,
            k,
            method,
            objective,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Number of non-empty clusters.
    pub fn occupied(&self) -> usize {
        self.sizes().iter().filter(|&&s| s > 0).count()
    }

    /// True when some cluster is empty (possible only for threshold strata).
    pub fn is_degenerate(&self) -> bool {
        self.occupied() < self.k
    }
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k must satisfy 1 <= k <= n (k = {k}, n = {n})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_relabels_by_first_appearance() {
        let a = Assignment::canonical(&[2, 2, 0, 1, 0], 3, ClusterMethod::Ahc, 0.0);
        assert_eq!(a.labels, vec![0, 0, 1, 2, 1]);
        assert_eq!(a.sizes(), vec![2, 2, 1]);
        assert!(!a.is_degenerate());
    }

    #[test]
    fn method_tags_round_trip() {
        for m in ClusterMethod::GRID {
            assert_eq!(m.tag().parse::<ClusterMethod>().unwrap(), m);
        }
    }
}
