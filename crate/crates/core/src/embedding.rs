//! Two-dimensional manifold embedding of a precomputed distance matrix.
//!
//! Fuzzy simplicial set construction on the k-nearest-neighbor graph
//! followed by a stochastic-gradient layout with negative sampling.
//! Internally every point is handled in patient-id order so the result does
//! not depend on how the input matrix is ordered.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientId;
use crate::error::{Error, Result};
use crate::metrics::{DistanceMatrix, MatrixKind};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 500,
            negative_samples: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub ids: Vec<PatientId>,
    pub coords: Vec<[f64; 2]>,
    pub params: EmbeddingParams,
    /// Low-dimensional kernel parameters `1 / (1 + a r^(2b))`.
    pub kernel: (f64, f64),
    pub connected_components: usize,
}

impl Embedding {
    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::euclidean(self.ids.clone(), &self.coords, MatrixKind::Embedded)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["patient_id", "u1", "u2"])?;
        for (id, [u1, u2]) in self.ids.iter().zip(&self.coords) {
            w.write_record([id.clone(), u1.to_string(), u2.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Fit `(a, b)` of `1 / (1 + a x^(2b))` to the offset-exponential target curve
/// (1 below `min_dist`, `exp(-(x - min_dist) / spread)` above) by damped
/// Gauss-Newton on 300 points over `[0, 3 spread]`.
pub fn fit_kernel(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let cost = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, 1.0);
    let mut cur = cost(a, b);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let r = f - y;
            let ja = -p / (den * den);
            let jb = -a * p * 2.0 * x.ln() / (den * den);
            g0 += ja * r;
            g1 += jb * r;
            h00 += ja * ja;
            h01 += ja * jb;
            h11 += jb * jb;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (d00, d11) = (h00 * (1.0 + lambda), h11 * (1.0 + lambda));
            let det = d00 * d11 - h01 * h01;
            let da = -(d11 * g0 - h01 * g1) / det;
            let db = -(d00 * g1 - h01 * g0) / det;
            let (na, nb) = (a + da, b + db);
            if na > 0.0 && nb > 0.0 {
                let c = cost(na, nb);
                if c < cur {
                    let rel = (cur - c) / cur;
                    a = na;
                    b = nb;
                    cur = c;
                    lambda *= 0.3;
                    improved = rel > 1e-14;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

struct Graph {
    /// `(head, tail, weight)` of the symmetrized membership graph, head < tail.
    edges: Vec<(usize, usize, f64)>,
    components: usize,
}

/// Neighbors of each point (excluding itself), nearest first, ties by index.
fn knn(d: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    (0..d.n)
        .into_par_iter()
        .map(|i| {
            let mut idx: Vec<usize> = (0..d.n).filter(|&j| j != i).collect();
            idx.sort_by(|&x, &y| d.get(i, x).total_cmp(&d.get(i, y)).then(x.cmp(&y)));
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Bandwidth so that `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)`.
pub fn smooth_knn_sigma(dists: &[f64], rho: f64, target: f64) -> f64 {
    let total = |sigma: f64| -> f64 { dists.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum() };
    let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
    for _ in 0..64 {
        let s = total(mid);
        if (s - target).abs() < 1e-12 {
            break;
        }
        if s > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    mid
}

fn fuzzy_graph(d: &DistanceMatrix, k: usize) -> Graph {
    let n = d.n;
    let neighbors = knn(d, k);
    let target = (k as f64).log2();
    let directed: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dists: Vec<f64> = neighbors[i].iter().map(|&j| d.get(i, j)).collect();
            let rho = dists[0];
            let sigma = smooth_knn_sigma(&dists, rho, target);
            neighbors[i]
                .iter()
                .zip(&dists)
                .map(|(&j, &dij)| (j, (-(dij - rho).max(0.0) / sigma).exp()))
                .collect()
        })
        .collect();
    let mut w = std::collections::BTreeMap::<(usize, usize), (f64, f64)>::new();
    for (i, row) in directed.iter().enumerate() {
        for &(j, wij) in row {
            let (key, forward) = if i < j { ((i, j), true) } else { ((j, i), false) };
            let e = w.entry(key).or_insert((0.0, 0.0));
            if forward {
                e.0 = wij;
            } else {
                e.1 = wij;
            }
        }
    }
    let edges: Vec<(usize, usize, f64)> = w
        .into_iter()
        .map(|((i, j), (a, b))| (i, j, a + b - a * b))
        .filter(|&(_, _, v)| v > 0.0)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(i, j, _) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let components = (0..n).filter(|&i| find(&mut parent, i) == i).count();
    Graph { edges, components }
}

const GRAD_CLIP: f64 = 4.0;

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

pub fn embed(matrix: &DistanceMatrix, params: &EmbeddingParams) -> Result<Embedding> {
    let n = matrix.n;
    if params.n_neighbors < 2 || params.n_neighbors >= n {
        return Err(Error::InvalidArgument(format!(
            "n_neighbors must satisfy 2 <= k < n (k = {}, n = {n})",
            params.n_neighbors
        )));
    }
    if !(params.min_dist > 0.0) || !(params.spread > 0.0) {
        return Err(Error::InvalidArgument("min_dist and spread must be > 0".into()));
    }

    // Canonical order by patient id.
    let mut canon: Vec<usize> = (0..n).collect();
    canon.sort_by(|&a, &b| matrix.ids[a].cmp(&matrix.ids[b]).then(a.cmp(&b)));
    let d = matrix.select(&canon);

    let graph = fuzzy_graph(&d, params.n_neighbors);
    if graph.components > 1 {
        log::warn!("kNN graph has {} connected components", graph.components);
    }
    let (a, b) = fit_kernel(params.min_dist, params.spread);

    let mut init_rng = seed::rng(seed::derive(params.seed, "embedding-init"));
    let mut coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [init_rng.random_range(-10.0..=10.0), init_rng.random_range(-10.0..=10.0)])
        .collect();
    // One negative-sampling stream per point, keyed by its patient id.
    let mut streams: Vec<seed::Rng> = d.ids.iter().map(|id| seed::rng_for(params.seed, id)).collect();

    let max_w = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let n_epochs = params.n_epochs as f64;
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter(|e| e.2 >= max_w / n_epochs)
        .map(|&(i, j, w)| (i, j, max_w / w))
        .collect();
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let neg_period: Vec<f64> = edges.iter().map(|e| e.2 / params.negative_samples.max(1) as f64).collect();
    let mut next_negative = neg_period.clone();

    for epoch in 0..params.n_epochs {
        let lr = 1.0 - epoch as f64 / n_epochs;
        let now = epoch as f64 + 1.0;
        for (e, &(head, tail, period)) in edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            // Attraction, applied to both endpoints.
            let diff = [coords[head][0] - coords[tail][0], coords[head][1] - coords[tail][1]];
            let d2 = diff[0] * diff[0] + diff[1] * diff[1];
            let coef = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b))
            } else {
                0.0
            };
            for k in 0..2 {
                let g = clip(coef * diff[k]) * lr;
                coords[head][k] += g;
                coords[tail][k] -= g;
            }
            next_sample[e] += period;

            let due = ((now - next_negative[e]) / neg_period[e]).floor() as i64 + 1;
            let due = due.max(0) as usize;
            for _ in 0..due {
                let other = streams[head].random_range(0..n);
                if other == head {
                    continue;
                }
                let diff = [coords[head][0] - coords[other][0], coords[head][1] - coords[other][1]];
                let d2 = diff[0] * diff[0] + diff[1] * diff[1];
                let coef = if d2 > 0.0 {
                    2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)))
                } else {
                    0.0
                };
                for k in 0..2 {
                    let g = if coef > 0.0 { clip(coef * diff[k]) } else { GRAD_CLIP };
                    coords[head][k] += g * lr;
                }
            }
            next_negative[e] += due as f64 * neg_period[e];
        }
    }

    // Back to the caller's order.
    let mut out = vec![[0.0; 2]; n];
    for (pos, &orig) in canon.iter().enumerate() {
        out[orig] = coords[pos];
    }
    if out.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::Internal("embedding produced non-finite coordinates".into()));
    }
    Ok(Embedding {
        ids: matrix.ids.clone(),
        coords: out,
        params: *params,
        kernel: (a, b),
        connected_components: graph.components,
    })
}
