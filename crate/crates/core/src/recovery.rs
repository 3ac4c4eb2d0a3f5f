//! Permutation-matched recovery error.
//!
//! `min_P max_j ||(Theta_hat P)_j - Theta*_j||_2` over column permutations.
//! Up to [`EXHAUSTIVE_LIMIT`] components every permutation is scanned;
//! beyond that the bottleneck assignment is found by bisecting over the
//! sorted cost values and testing for a perfect matching.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Returns `(value, perm)` where column `perm[j]` of `theta_hat` is matched
/// to column `j` of `theta_star`.
pub fn epsilon_recovery(
    theta_hat: &DMatrix<f64>,
    theta_star: &DMatrix<f64>,
) -> Result<(f64, Vec<usize>)> {
    if theta_hat.shape() != theta_star.shape() {
        return Err(Error::DimensionMismatch(format!(
            "theta_hat is {:?}, theta_star is {:?}",
            theta_hat.shape(),
            theta_star.shape()
        )));
    }
    let m = theta_star.ncols();
    if m == 0 {
        return Ok((0.0, Vec::new()));
    }
    // cost[(a, b)] = ||theta_hat_a - theta_star_b||
    let cost = DMatrix::from_fn(m, m, |a, b| {
        (theta_hat.column(a) - theta_star.column(b)).norm()
    });
    if m <= EXHAUSTIVE_LIMIT {
        Ok(exhaustive(&cost))
    } else {
        Ok(bottleneck(&cost))
    }
}

fn max_cost(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(j, &a)| cost[(a, j)])
        .fold(0.0, f64::max)
}

/// Lexicographic scan; the first permutation attaining the minimum wins.
fn exhaustive(cost: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let m = cost.nrows();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (max_cost(cost, &perm), perm.clone());
    while next_permutation(&mut perm) {
        let v = max_cost(cost, &perm);
        if v < best.0 {
            best = (v, perm.clone());
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn bottleneck(cost: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let mut levels: Vec<f64> = cost.iter().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    let mut found = perfect_matching(cost, levels[hi]).expect("complete graph always matches");
    while lo < hi {
        let mid = (lo + hi) / 2;
        match perfect_matching(cost, levels[mid]) {
            Some(p) => {
                hi = mid;
                found = p;
            }
            None => lo = mid + 1,
        }
    }
    (max_cost(cost, &found), found)
}

/// Perfect matching using only edges with cost `<= threshold` (Kuhn's
/// augmenting paths). Returns `perm[j]` = row matched to column `j`.
fn perfect_matching(cost: &DMatrix<f64>, threshold: f64) -> Option<Vec<usize>> {
    let m = cost.nrows();
    let mut row_of_col: Vec<Option<usize>> = vec![None; m];
    for a in 0..m {
        let mut seen = vec![false; m];
        if !augment(cost, threshold, a, &mut seen, &mut row_of_col) {
            return None;
        }
    }
    row_of_col.into_iter().collect()
}

fn augment(
    cost: &DMatrix<f64>,
    threshold: f64,
    row: usize,
    seen: &mut [bool],
    row_of_col: &mut [Option<usize>],
) -> bool {
    for col in 0..cost.ncols() {
        if cost[(row, col)] <= threshold && !seen[col] {
            seen[col] = true;
            let free = match row_of_col[col] {
                None => true,
                Some(other) => augment(cost, threshold, other, seen, row_of_col),
            };
            if free {
                row_of_col[col] = Some(row);
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(hat: &DMatrix<f64>, star: &DMatrix<f64>) -> f64 {
        let m = star.ncols();
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        loop {
            let v = (0..m)
                .map(|j| (hat.column(perm[j]) - star.column(j)).norm())
                .fold(0.0, f64::max);
            best = best.min(v);
            if !next_permutation(&mut perm) {
                return best;
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, d: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn swapped_columns() {
        let star = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let hat = DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (v, p) = epsilon_recovery(&hat, &star).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(p, vec![1, 0]);
    }

    #[test]
    fn single_perturbation() {
        let star = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let mut hat = star.clone();
        hat[(0, 2)] += 0.06;
        hat[(1, 2)] += 0.08;
        let (v, p) = epsilon_recovery(&hat, &star).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert_eq!(p, vec![0, 1, 2]);
    }

    #[test]
    fn shape_mismatch() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::zeros(2, 3);
        assert!(epsilon_recovery(&a, &b).is_err());
    }

    #[test]
    fn matches_brute_force_small_and_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [3, 4, 9, 10] {
            for _ in 0..4 {
                let star = random(&mut rng, 3, m);
                let hat = random(&mut rng, 3, m);
                let (v, p) = epsilon_recovery(&hat, &star).unwrap();
                assert!((v - brute_force(&hat, &star)).abs() < 1e-12, "m = {m}");
                let mut sorted = p.clone();
                sorted.sort();
                assert_eq!(sorted, (0..m).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn invariant_to_column_permutation_of_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let star = random(&mut rng, 4, 5);
        let hat = random(&mut rng, 4, 5);
        let (v, _) = epsilon_recovery(&hat, &star).unwrap();
        let shuffled = DMatrix::from_fn(4, 5, |i, j| hat[(i, (j + 2) % 5)]);
        let (w, _) = epsilon_recovery(&shuffled, &star).unwrap();
        assert_eq!(v, w);
    }
}
