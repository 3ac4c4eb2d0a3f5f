//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// What to do when the selected rows do not have full column rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    #[default]
    Fail,
    /// Minimum-norm minimizer via SVD.
    MinNorm,
}

/// Minimizer of `||x theta - y||^2` by Householder QR.
///
/// Numerical rank is read off the singular values of the triangular factor,
/// which equal those of `x`.
pub fn solve_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    policy: RankPolicy,
) -> Result<DVector<f64>> {
    let (rows, cols) = x.shape();
    if rows == 0 {
        return Err(Error::EmptySet);
    }
    if rows < cols {
        return match policy {
            RankPolicy::Fail => Err(Error::RankDeficient {
                rows,
                cols,
                rank: numerical_rank(&x.singular_values()),
            }),
            RankPolicy::MinNorm => Ok(min_norm_solve(x.clone(), y)),
        };
    }
    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let r = qr.r();
    let rhs = qty.rows(0, cols).into_owned();
    let sv = r.singular_values();
    let rank = numerical_rank(&sv);
    if rank == cols {
        return r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::RankDeficient { rows, cols, rank });
    }
    match policy {
        RankPolicy::Fail => Err(Error::RankDeficient { rows, cols, rank }),
        RankPolicy::MinNorm => Ok(min_norm_solve(r, &rhs)),
    }
}

fn numerical_rank(sv: &DVector<f64>) -> usize {
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn min_norm_solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let cols = a.ncols();
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    if max <= 0.0 {
        return DVector::zeros(cols);
    }
    svd.solve(b, RANK_TOL * max)
        .unwrap_or_else(|_| DVector::zeros(cols))
}

/// `x^T x`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(sym: &DMatrix<f64>) -> (f64, f64) {
    if sym.nrows() == 0 {
        return (0.0, 0.0);
    }
    let ev = sym.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Largest eigenvalue of `(1/rows) x^T x` by power iteration.
///
/// Starts from the normalized all-ones vector so the estimate is
/// deterministic. The Rayleigh quotient of the final iterate is returned.
pub fn power_iteration_lipschitz(x: &DMatrix<f64>, iterations: usize) -> f64 {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let scale = 1.0 / rows as f64;
    let mut v = DVector::from_element(cols, 1.0 / (cols as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let w = x.tr_mul(&(x * &v)) * scale;
        estimate = v.dot(&w);
        let norm = w.norm();
        if norm <= 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    let w = x.tr_mul(&(x * &v)) * scale;
    estimate.max(v.dot(&w))
}
