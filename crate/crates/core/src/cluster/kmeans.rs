use rand::Rng as _;
use rayon::prelude::*;

use super::{check_k, Assignment, ClusterMethod};
use crate::error::Result;
use crate::seed;

const MAX_ITER: usize = 300;
const MOVE_TOL: f64 = 1e-4;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One Lloyd run: (labels, inertia).
fn lloyd<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut rng = seed::rng(seed);
    let dim = points[0].as_ref().len();
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    for _ in 0..MAX_ITER {
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p.as_ref(), &centroids);
            labels[i] = c;
            dists[i] = d;
        }
        // Empty cluster: move the point farthest from its centroid into it.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a donor cluster");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                dists[far] = 0.0;
            }
        }
        let mut next = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, x) in next[l].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for (c, cen) in next.iter_mut().enumerate() {
            for s in cen.iter_mut() {
                *s /= counts[c] as f64;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < MOVE_TOL {
            break;
        }
    }
    // Final assignment against the final centroids, keeping clusters non-empty.
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let (c, _) = nearest(p.as_ref(), &centroids);
        labels[i] = c;
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return lloyd_fallback(points, labels, k);
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p.as_ref(), &centroids[l]))
        .sum();
    (labels, inertia)
}

/// Inertia of a labeling that would otherwise lose a cluster (duplicate
/// points); centroids are recomputed from the labels.
fn lloyd_fallback<P: AsRef<[f64]>>(points: &[P], mut labels: Vec<usize>, k: usize) -> (Vec<usize>, f64) {
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] == 0 {
            let donor = (0..labels.len()).rev().find(|&i| counts[labels[i]] > 1).expect("k <= n");
            counts[labels[donor]] -= 1;
            labels[donor] = c;
            counts[c] = 1;
        }
    }
    (labels.clone(), inertia_of(points, &labels, k))
}

fn inertia_of<P: AsRef<[f64]>>(points: &[P], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].as_ref().len();
    let mut cen = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in cen[l].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (c, v) in cen.iter_mut().enumerate() {
        for s in v.iter_mut() {
            *s /= counts[c].max(1) as f64;
        }
    }
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p.as_ref(), &cen[l])).sum()
}

/// k-means++ seeded Lloyd iterations; the restart with the lowest inertia
/// wins (earliest restart on ties).
pub fn kmeans<P: AsRef<[f64]> + Sync>(points: &[P], k: usize, seed: u64, restarts: usize) -> Result<Assignment> {
    check_k(k, points.len())?;
    let runs: Vec<(Vec<usize>, f64)> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd(points, k, seed::derive_index(seed, r)))
        .collect();
    let (labels, inertia) = runs
        .into_iter()
        .reduce(|best, run| if run.1 < best.1 { run } else { best })
        .expect("at least one restart");
    Ok(Assignment::canonical(&labels, k, ClusterMethod::KMeans, inertia))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjusted_rand_index;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let centers = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..30 {
                pts.push([center[0] + normal.sample(&mut rng), center[1] + normal.sample(&mut rng)]);
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn single_cluster_inertia_is_total_variance() {
        let (pts, _) = blobs(1);
        let a = kmeans(&pts, 1, 0, 3).unwrap();
        let n = pts.len() as f64;
        let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        let total: f64 = pts.iter().map(|p| sq_dist(p, &mean)).sum();
        assert!(a.labels.iter().all(|&l| l == 0));
        assert!((a.objective - total).abs() < 1e-9 * total);
    }

    #[test]
    fn separated_blobs() {
        let (pts, labels) = blobs(2);
        let a = kmeans(&pts, 3, 7, 10).unwrap();
        assert_eq!(adjusted_rand_index(&a.labels, &labels), 1.0);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 9.0]];
        let a = kmeans(&pts, 4, 3, 5).unwrap();
        assert_eq!(a.objective, 0.0);
        assert_eq!(a.sizes(), vec![1; 4]);
    }

    #[test]
    fn duplicates_keep_clusters_non_empty() {
        let pts = [[1.0, 1.0]; 5];
        let a = kmeans(&pts, 3, 3, 2).unwrap();
        assert!(!a.is_degenerate());
    }

    #[test]
    fn permutation_invariant_up_to_relabeling() {
        let (pts, _) = blobs(3);
        let a = kmeans(&pts, 3, 1, 10).unwrap();
        let rev: Vec<[f64; 2]> = pts.iter().rev().copied().collect();
        let b = kmeans(&rev, 3, 1, 10).unwrap();
        let back: Vec<usize> = b.labels.iter().rev().copied().collect();
        assert_eq!(adjusted_rand_index(&a.labels, &back), 1.0);
    }

    #[test]
    fn k_above_n_is_an_error() {
        assert!(kmeans(&[[0.0, 0.0]], 2, 0, 1).is_err());
    }
}
