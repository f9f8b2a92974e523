use super::{check_k, Assignment, ClusterMethod};
use crate::error::Result;
use crate::metrics::DistanceMatrix;

/// Medoid sets are enumerated exhaustively after SWAP when there are at
/// most this many of them.
pub const EXHAUSTIVE_LIMIT: u64 = 20_000;

/// Result of PAM: the assignment plus the chosen medoid indices and the
/// total cost after BUILD, after every accepted SWAP and after the
/// exhaustive pass when it improved on SWAP.
#[derive(Debug, Clone, PartialEq)]
pub struct Medoids {
    pub assignment: Assignment,
    pub medoids: Vec<usize>,
    pub cost_trace: Vec<f64>,
    pub exhaustive: bool,
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    let mut r: u64 = 1;
    for i in 0..k {
        r = r.saturating_mul(n as u64 - i) / (i + 1);
    }
    r
}

/// Lowest-cost medoid set over all `C(n, k)` sets, first in lexicographic order on ties.
fn exhaustive_best(d: &DistanceMatrix, k: usize) -> (Vec<usize>, f64) {
    let n = d.n;
    let mut set: Vec<usize> = (0..k).collect();
    let mut best = (set.clone(), total_cost(d, &set));
    loop {
        let Some(i) = (0..k).rev().find(|&i| set[i] < n - k + i) else {
            return best;
        };
        set[i] += 1;
        for j in i + 1..k {
            set[j] = set[j - 1] + 1;
        }
        let c = total_cost(d, &set);
        if c < best.1 {
            best = (set.clone(), c);
        }
    }
}

fn total_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.n)
        .map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Nearest medoid per point; a medoid always belongs to its own cluster,
/// other ties go to the earliest medoid.
fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..d.n)
        .map(|i| {
            if let Some(pos) = medoids.iter().position(|&m| m == i) {
                return pos;
            }
            let mut best = (0, f64::INFINITY);
            for (pos, &m) in medoids.iter().enumerate() {
                if d.get(i, m) < best.1 {
                    best = (pos, d.get(i, m));
                }
            }
            best.0
        })
        .collect()
}

/// Partitioning Around Medoids: greedy BUILD, then best-improvement SWAP
/// until no swap lowers the total cost. SWAP can stop in a local optimum, so
/// small problems (at most [`EXHAUSTIVE_LIMIT`] medoid sets) are finished by
/// enumeration. Deterministic; ties go to the lowest index. The seed is
/// accepted for interface symmetry and unused.
pub fn kmedoids(d: &DistanceMatrix, k: usize, _seed: u64) -> Result<Medoids> {
    check_k(k, d.n)?;
    let n = d.n;
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::INFINITY);
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n).map(|i| nearest[i].min(d.get(i, c))).sum();
            if cost < best.1 {
                best = (c, cost);
            }
        }
        medoids.push(best.0);
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(d.get(i, best.0));
        }
    }

    let mut cost = total_cost(d, &medoids);
    let mut trace = vec![cost];
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for pos in 0..k {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[pos] = o;
                let c = total_cost(d, &trial);
                if c < best.map_or(cost, |b| b.2) {
                    best = Some((pos, o, c));
                }
            }
        }
        match best {
            Some((pos, o, c)) if cost - c > 1e-12 * cost.abs().max(1.0) => {
                medoids[pos] = o;
                debug_assert!(c <= cost);
                cost = c;
                trace.push(cost);
            }
            _ => break,
        }
    }
    let exhaustive = binomial(n, k) <= EXHAUSTIVE_LIMIT;
    if exhaustive {
        let (set, c) = exhaustive_best(d, k);
        if c < cost {
            medoids = set;
            cost = c;
            trace.push(cost);
        }
    }
    let labels = assign(d, &medoids);
    Ok(Medoids {
        assignment: Assignment::canonical(&labels, k, ClusterMethod::KMedoids, cost),
        medoids,
        cost_trace: trace,
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MatrixKind;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = crate::seed::rng(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        DistanceMatrix::euclidean((0..n).map(|i| i.to_string()).collect(), &pts, MatrixKind::Custom)
    }

    #[test]
    fn matches_exhaustive_optimum() {
        for seed in 0..20 {
            let d = random_points(8, seed);
            let r = kmedoids(&d, 2, 0).unwrap();
            let mut best = f64::INFINITY;
            for a in 0..8 {
                for b in a + 1..8 {
                    best = best.min(total_cost(&d, &[a, b]));
                }
            }
            assert!(r.exhaustive);
            assert!((r.assignment.objective - best).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(8, 2), 28);
        assert_eq!(binomial(150, 2), 11_175);
        assert_eq!(binomial(10, 10), 1);
        assert!(binomial(150, 3) > EXHAUSTIVE_LIMIT);
    }

    #[test]
    fn enumeration_visits_every_set() {
        let d = random_points(9, 3);
        let (set, c) = exhaustive_best(&d, 3);
        for a in 0..9 {
            for b in a + 1..9 {
                for e in b + 1..9 {
                    assert!(total_cost(&d, &[a, b, e]) >= c);
                }
            }
        }
        assert_eq!(total_cost(&d, &set), c);
    }

    #[test]
    fn cost_never_increases() {
        let d = random_points(40, 9);
        let r = kmedoids(&d, 4, 0).unwrap();
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn duplicate_of_medoid_costs_nothing() {
        let pts = [[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.5, 0.0]];
        let d = DistanceMatrix::euclidean((0..4).map(|i| i.to_string()).collect(), &pts, MatrixKind::Custom);
        let r = kmedoids(&d, 2, 0).unwrap();
        assert_eq!(r.assignment.labels[0], r.assignment.labels[1]);
        assert!((r.assignment.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_costs_zero() {
        let d = random_points(6, 2);
        let r = kmedoids(&d, 6, 0).unwrap();
        assert_eq!(r.assignment.objective, 0.0);
        assert!(!r.assignment.is_degenerate());
    }

    #[test]
    fn duplicated_medoids_keep_clusters_non_empty() {
        let pts = [[1.0, 1.0]; 4];
        let d = DistanceMatrix::euclidean((0..4).map(|i| i.to_string()).collect(), &pts, MatrixKind::Custom);
        let r = kmedoids(&d, 3, 0).unwrap();
        assert!(!r.assignment.is_degenerate());
    }
}
