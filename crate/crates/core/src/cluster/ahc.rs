use serde::{Deserialize, Serialize};

use super::{check_k, Assignment, ClusterMethod};
use crate::error::Result;
use crate::metrics::DistanceMatrix;

/// One agglomeration step. Clusters are named by their smallest member
/// index, so `a < b` and the merged cluster keeps the name `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Complete linkage with the Lance-Williams update
    /// `d(a+b, x) = max(d(a, x), d(b, x))`; ties go to the smallest `(a, b)`.
    pub fn complete(d: &DistanceMatrix) -> Self {
        let n = d.n;
        let mut dist = d.data.clone();
        let mut active: Vec<bool> = vec![true; n];
        let mut size = vec![1usize; n];
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
            for i in (0..n).filter(|&i| active[i]) {
                for j in (i + 1..n).filter(|&j| active[j]) {
                    let v = dist[i * n + j];
                    if v < best.2 || best.0 == usize::MAX {
                        best = (i, j, v);
                    }
                }
            }
            let (a, b, h) = best;
            for x in 0..n {
                if active[x] && x != a && x != b {
                    let v = dist[a * n + x].max(dist[b * n + x]);
                    dist[a * n + x] = v;
                    dist[x * n + a] = v;
                }
            }
            active[b] = false;
            size[a] += size[b];
            merges.push(Merge {
                a,
                b,
                height: h,
                size: size[a],
            });
        }
        Dendrogram { n, merges }
    }

    /// Apply the first `n - k` merges.
    pub fn cut(&self, k: usize) -> Result<Assignment> {
        check_k(k, self.n)?;
        let mut parent: Vec<usize> = (0..self.n).collect();
        let applied = &self.merges[..self.n - k];
        for m in applied {
            parent[m.b] = m.a;
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let labels: Vec<usize> = (0..self.n).map(root).collect();
        let height = applied.last().map_or(0.0, |m| m.height);
        // Roots are original indices; canonical relabeling makes them dense.
        let mut asg = Assignment::canonical(&labels, self.n, ClusterMethod::Ahc, height);
        asg.k = k;
        Ok(asg)
    }
}

pub fn ahc_complete(d: &DistanceMatrix, k: usize) -> Result<Assignment> {
    check_k(k, d.n)?;
    Dendrogram::complete(d).cut(k)
}
