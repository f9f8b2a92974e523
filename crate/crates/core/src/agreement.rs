//! Partition agreement.

use std::collections::HashMap;

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1 when both partitions are identical up to relabeling, including
/// the degenerate case where both put everything in a single cluster.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
{
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut cells: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_up_to_relabeling() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = ["x", "x", "z", "z", "y", "y"];
        assert_eq!(adjusted_rand_index(&a, &b), 1.0);
    }

    #[test]
    fn known_value() {
        // Contingency [[2,1],[0,2]]: index 2, sums 4 and 4, total 10.
        let a = [0, 0, 0, 1, 1];
        let b = [0, 0, 1, 1, 1];
        let expected = (2.0 - 4.0 * 4.0 / 10.0) / (4.0 - 1.6);
        assert!((adjusted_rand_index(&a, &b) - expected).abs() < 1e-15);
    }

    #[test]
    fn symmetric() {
        let a = [0, 1, 1, 2, 0, 2, 1];
        let b = [1, 1, 0, 0, 2, 2, 1];
        assert_eq!(adjusted_rand_index(&a, &b), adjusted_rand_index(&b, &a));
    }
}
