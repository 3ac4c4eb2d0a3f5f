//! Structural quantities of an instance: component separation, feature
//! regularity `psi+/psi-`, affine error `V(delta)` and the one-step
//! contraction bound assembled from them.
//!
//! Regularity and affine error are extrema over exponentially many subsets
//! or over all directions. They are computed exactly only when enumeration
//! fits in [`EXACT_BUDGET`]; otherwise the sampled values are one-sided:
//! sampled `psi+` and `V` never exceed the truth, sampled `psi-` never
//! falls below it.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor_count;
use crate::ilts::SolverTrace;
use crate::linalg::eigen_extremes;
use crate::model::{random_unit, Dataset, GroundTruth};
use crate::parallel;
use crate::rng::{seeded, stream};

/// Largest number of subsets enumerated in exact mode.
pub const EXACT_BUDGET: u128 = 2_000_000;
/// Factor applied to sampled `psi+` in the contraction-bound check.
pub const PSI_PLUS_INFLATION: f64 = 2.0;

/// `(Q, Q_j)`: minimum pairwise distance over the largest norm, and per
/// component the distance to its nearest neighbour over its own norm.
pub fn q_separation(theta_star: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let m = theta_star.ncols();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "separation needs m >= 2, got {m}"
        )));
    }
    let norms: Vec<f64> = theta_star.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Degenerate(format!("component {j} is zero")));
    }
    let nearest: Vec<f64> = (0..m)
        .map(|j| {
            (0..m)
                .filter(|&l| l != j)
                .map(|l| (theta_star.column(j) - theta_star.column(l)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min_dist = nearest.iter().copied().fold(f64::INFINITY, f64::min);
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let q_j = nearest.iter().zip(&norms).map(|(d, n)| d / n).collect();
    Ok((min_dist / max_norm, q_j))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    pub k: usize,
    /// Largest eigenvalue of `X_S^T X_S` over the subsets examined.
    pub psi_plus: f64,
    /// Smallest eigenvalue of `X_S^T X_S` over the subsets examined.
    pub psi_minus: f64,
    pub mode: EstimateMode,
    /// Subsets drawn in sampled mode.
    pub trials: Option<usize>,
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        match acc.checked_mul(n - i) {
            Some(v) => acc = v / (i + 1),
            None => return u128::MAX,
        }
    }
    acc
}

/// Extreme eigenvalues of a small symmetric matrix, closed form up to 2x2.
fn sym_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    match m.nrows() {
        1 => (m[(0, 0)], m[(0, 0)]),
        2 => {
            let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let mean = 0.5 * (a + c);
            let r = (0.5 * (a - c)).hypot(b);
            (mean - r, mean + r)
        }
        _ => eigen_extremes(m),
    }
}

fn subset_extremes(x: &DMatrix<f64>, set: &[usize]) -> (f64, f64) {
    let xs = x.select_rows(set);
    sym_extremes(&xs.tr_mul(&xs))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "subset size {k} outside [1, {n}]"
        )));
    }
    Ok(())
}

fn finish(
    k: usize,
    lo: f64,
    hi: f64,
    mode: EstimateMode,
    trials: Option<usize>,
) -> RegularityEstimate {
    let psi_minus = lo.max(0.0);
    RegularityEstimate {
        k,
        psi_plus: hi.max(psi_minus),
        psi_minus,
        mode,
        trials,
    }
}

/// Exact `psi+(k)` and `psi-(k)` by enumerating every size-`k` row subset.
pub fn feature_regularity_exact(x: &DMatrix<f64>, k: usize) -> Result<RegularityEstimate> {
    let (n, d) = x.shape();
    check_k(n, k)?;
    let needed = binomial(n, k);
    if needed > EXACT_BUDGET {
        return Err(Error::BudgetExceeded {
            needed,
            budget: EXACT_BUDGET,
        });
    }
    let outer: Vec<DMatrix<f64>> = x.row_iter().map(|r| r.transpose() * r).collect();
    let firsts: Vec<usize> = (0..=n - k).collect();
    let run = |&first: &usize| {
        let mut levels = vec![DMatrix::<f64>::zeros(d, d); k];
        levels[0].copy_from(&outer[first]);
        let mut best = (f64::INFINITY, f64::NEG_INFINITY);
        descend(&outer, &mut levels, 1, first + 1, k, &mut best);
        best
    };
    let parts: Vec<(f64, f64)> = match parallel::pool() {
        Some(pool) => pool.install(|| firsts.par_iter().map(run).collect()),
        None => firsts.iter().map(run).collect(),
    };
    let (lo, hi) = parts
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
            (a.0.min(b.0), a.1.max(b.1))
        });
    Ok(finish(k, lo, hi, EstimateMode::Exact, None))
}

/// `levels[depth - 1]` holds the Gram matrix of the rows chosen so far.
fn descend(
    outer: &[DMatrix<f64>],
    levels: &mut [DMatrix<f64>],
    depth: usize,
    start: usize,
    k: usize,
    best: &mut (f64, f64),
) {
    if depth == k {
        let (lo, hi) = sym_extremes(&levels[k - 1]);
        best.0 = best.0.min(lo);
        best.1 = best.1.max(hi);
        return;
    }
    let n = outer.len();
    for i in start..=n - (k - depth) {
        let (head, tail) = levels.split_at_mut(depth);
        tail[0].copy_from(&head[depth - 1]);
        tail[0] += &outer[i];
        descend(outer, levels, depth + 1, i + 1, k, best);
    }
}

/// Leverage scores `x_i^T (X^T X)^+ x_i`.
fn leverage(x: &DMatrix<f64>) -> Vec<f64> {
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&c| svd.singular_values[c] > 1e-10 * smax)
        .collect();
    (0..x.nrows())
        .map(|i| keep.iter().map(|&c| u[(i, c)] * u[(i, c)]).sum())
        .collect()
}

/// Rows with the `k` largest and the `k` smallest leverage scores.
fn leverage_subsets(x: &DMatrix<f64>, k: usize) -> [Vec<usize>; 2] {
    let h = leverage(x);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    let mut high = order[..k].to_vec();
    let mut low = order[order.len() - k..].to_vec();
    high.sort_unstable();
    low.sort_unstable();
    [high, low]
}

/// Sampled `psi+(k)` / `psi-(k)` from `trials` uniform subsets plus the
/// two leverage-greedy subsets.
pub fn feature_regularity_sampled(
    x: &DMatrix<f64>,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<RegularityEstimate> {
    feature_regularity_sampled_with(x, k, trials, seed, &[])
}

/// As [`feature_regularity_sampled`], also examining `extra` subsets.
///
/// Extra subsets shorter than `k` are padded with the highest-leverage
/// rows they do not already contain; longer ones are rejected.
pub fn feature_regularity_sampled_with(
    x: &DMatrix<f64>,
    k: usize,
    trials: usize,
    seed: u64,
    extra: &[Vec<usize>],
) -> Result<RegularityEstimate> {
    let n = x.nrows();
    check_k(n, k)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = seeded(seed, stream::REGULARITY);
    let mut subsets: Vec<Vec<usize>> = (0..trials)
        .map(|_| sample(&mut rng, n, k).into_vec())
        .collect();
    let [high, low] = leverage_subsets(x, k);
    for set in extra {
        if set.len() > k || set.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("extra subset does not fit".into()));
        }
        let mut padded = set.clone();
        let mut present = vec![false; n];
        for &i in set {
            present[i] = true;
        }
        let mut order: Vec<usize> = high.iter().copied().chain(0..n).collect();
        order.retain(|&i| !std::mem::replace(&mut present[i], true));
        padded.extend(order.into_iter().take(k - set.len()));
        subsets.push(padded);
    }
    subsets.push(high);
    subsets.push(low);
    let eval = |s: &Vec<usize>| subset_extremes(x, s);
    let parts: Vec<(f64, f64)> = match parallel::pool() {
        Some(pool) => pool.install(|| subsets.par_iter().map(eval).collect()),
        None => subsets.iter().map(eval).collect(),
    };
    let (lo, hi) = parts
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
            (a.0.min(b.0), a.1.max(b.1))
        });
    Ok(finish(k, lo, hi, EstimateMode::Sampled, Some(trials)))
}

/// Exact when `C(n, k)` fits the budget, sampled otherwise.
pub fn feature_regularity(
    x: &DMatrix<f64>,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<RegularityEstimate> {
    if binomial(x.nrows(), k) <= EXACT_BUDGET {
        feature_regularity_exact(x, k)
    } else {
        feature_regularity_sampled(x, k, trials, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineErrorEstimate {
    /// `||v1|| / ||v2||`.
    pub delta: f64,
    pub j: usize,
    /// Largest `V` found over the direction pool; a lower bound on the supremum.
    pub value: usize,
    pub directions_tried: usize,
    pub mode: EstimateMode,
}

/// Clean component labels; corrupted samples map to `None`.
pub fn clean_labels(truth: &GroundTruth) -> Vec<Option<usize>> {
    truth
        .partition
        .iter()
        .zip(&truth.corrupted)
        .map(|(&l, &bad)| (!bad).then_some(l))
        .collect()
}

/// Rows of component `j` and of the other components, with the trimming
/// offset `ceil((tau*_j - tau_j) n)`.
#[derive(Clone, Debug)]
pub struct AffineProblem {
    own: DMatrix<f64>,
    others: DMatrix<f64>,
    offset: usize,
    j: usize,
}

impl AffineProblem {
    pub fn new(x: &DMatrix<f64>, labels: &[Option<usize>], tau_j: f64, j: usize) -> Result<Self> {
        let n = x.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        let own: Vec<usize> = (0..n).filter(|&i| labels[i] == Some(j)).collect();
        let others: Vec<usize> = (0..n)
            .filter(|&i| matches!(labels[i], Some(l) if l != j))
            .collect();
        if own.is_empty() {
            return Err(Error::Degenerate(format!(
                "component {j} has no clean samples"
            )));
        }
        let tau_star = own.len() as f64 / n as f64;
        if !(tau_j > 0.0 && tau_j < tau_star) {
            return Err(Error::InvalidArgument(format!(
                "tau_j = {tau_j} must lie in (0, {tau_star})"
            )));
        }
        let offset = ((tau_star - tau_j) * n as f64 - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            own: x.select_rows(&own),
            others: x.select_rows(&others),
            offset,
            j,
        })
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Largest `V` with `[|X_j v1|]_(V + offset largest) >= [|X_-j v2|]_(V smallest)`.
    pub fn value_for(&self, v1: &DVector<f64>, v2: &DVector<f64>) -> usize {
        let mut a: Vec<f64> = (&self.own * v1).iter().map(|v| v.abs()).collect();
        let mut b: Vec<f64> = (&self.others * v2).iter().map(|v| v.abs()).collect();
        a.sort_by(|p, q| q.total_cmp(p));
        b.sort_by(f64::total_cmp);
        affine_scan(&a, &b, self.offset)
    }

    /// Max of [`value_for`](Self::value_for) over unit pairs `(u1, u2)`
    /// rescaled to `v1 = delta * u1`, `v2 = u2`.
    pub fn estimate(
        &self,
        delta: f64,
        pairs: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<AffineErrorEstimate> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta = {delta} outside (0, 1]"
            )));
        }
        let value = pairs
            .iter()
            .map(|(u1, u2)| self.value_for(&(u1 * delta), u2))
            .max()
            .unwrap_or(0);
        Ok(AffineErrorEstimate {
            delta,
            j: self.j,
            value,
            directions_tried: pairs.len(),
            mode: EstimateMode::Sampled,
        })
    }
}

/// `a` sorted descending, `b` ascending. Both conditions only weaken as
/// `V` grows, so the first failure ends the scan.
pub fn affine_scan(a: &[f64], b: &[f64], offset: usize) -> usize {
    let mut v = 0;
    while v < b.len() && v + offset < a.len() && a[v + offset] >= b[v] {
        v += 1;
    }
    v
}

/// `count` pairs of independent uniform unit directions in dimension `d`.
pub fn direction_pool(d: usize, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = seeded(seed, stream::DIRECTIONS);
    (0..count)
        .map(|_| (random_unit(&mut rng, d), random_unit(&mut rng, d)))
        .collect()
}

/// Sampled `V(delta)` for component `j` using `directions` random pairs.
pub fn affine_error_estimate(
    x: &DMatrix<f64>,
    labels: &[Option<usize>],
    tau_j: f64,
    j: usize,
    delta: f64,
    directions: usize,
    seed: u64,
) -> Result<AffineErrorEstimate> {
    let problem = AffineProblem::new(x, labels, tau_j, j)?;
    problem.estimate(delta, &direction_pool(x.ncols(), directions, seed))
}

/// `C = sum(V b) / sum(b^2)` with `b = max(delta n, ln n)`.
pub fn fit_scaling_constant(estimates: &[AffineErrorEstimate], n: usize) -> f64 {
    let ln_n = (n as f64).ln();
    let (num, den) = estimates.iter().fold((0.0, 0.0), |(num, den), e| {
        let b = (e.delta * n as f64).max(ln_n);
        (num + e.value as f64 * b, den + b * b)
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// `2 psi+ / psi-`.
pub fn one_step_bound(psi_plus: f64, psi_minus: f64) -> Result<f64> {
    if !(psi_minus > 0.0) {
        return Err(Error::Degenerate("psi- must be positive".into()));
    }
    Ok(2.0 * psi_plus / psi_minus)
}

/// Effective ratio `2 ||theta - theta_j|| / min_l ||theta_j - theta_l||`.
pub fn contraction_delta(theta: &DVector<f64>, theta_star: &DMatrix<f64>, j: usize) -> f64 {
    let target = theta_star.column(j);
    let sep = (0..theta_star.ncols())
        .filter(|&l| l != j)
        .map(|l| (target - theta_star.column(l)).norm())
        .fold(f64::INFINITY, f64::min);
    2.0 * (theta - target).norm() / sep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckOptions {
    /// Uniform subsets drawn when exact regularity is over budget.
    pub trials: usize,
    /// Random direction pairs added to the informed ones.
    pub directions: usize,
    pub seed: u64,
    pub inflation: f64,
    /// Absolute allowance for round-off in `||theta_{t+1} - theta_j||`.
    pub abs_tol: f64,
    /// Rounds starting closer than this are treated as converged.
    pub min_distance: f64,
}

impl Default for BoundCheckOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            directions: 64,
            seed: 0,
            inflation: PSI_PLUS_INFLATION,
            abs_tol: 1e-12,
            min_distance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub round: usize,
    pub distance: f64,
    pub delta: f64,
    pub affine_error: usize,
    /// Wrong-component and corrupted samples actually selected.
    pub wrong_selected: usize,
    /// Subset size at which `psi+` is evaluated.
    pub count: usize,
    pub psi_plus: f64,
    pub psi_plus_mode: EstimateMode,
    pub psi_minus: f64,
    pub bound: f64,
    pub observed: f64,
    pub holds: bool,
}

/// Compare every eligible round of an ILTS trace toward component `j` with
/// the one-step bound.
///
/// A round is eligible when its starting distance is at least
/// `min_distance` and at most half the distance to the nearest other
/// component. `psi+` is exact when the enumeration fits the budget and
/// otherwise sampled and multiplied by `inflation`; the sampled pool
/// includes the selected wrong samples. `psi-` is exact or the minimum over
/// sampled subsets together with every selected set of the trace. A round
/// holds when `d_{t+1} <= bound * d_t + abs_tol`.
pub fn check_contraction_bound(
    dataset: &Dataset,
    truth: &GroundTruth,
    trace: &SolverTrace,
    tau: f64,
    j: usize,
    options: &BoundCheckOptions,
) -> Result<Vec<BoundCheck>> {
    let n = dataset.n();
    let x = dataset.x();
    let labels = clean_labels(truth);
    let k = floor_count(tau, n);
    let target = truth.component(j);
    let others: Vec<usize> = (0..truth.m()).filter(|&l| l != j).collect();
    let sep = others
        .iter()
        .map(|&l| (&target - truth.component(l)).norm())
        .fold(f64::INFINITY, f64::min);
    let problem = AffineProblem::new(x, &labels, tau, j)?;
    let pool = direction_pool(dataset.d(), options.directions, options.seed);
    let corrupted = truth.corrupted_count();

    let psi_minus = if binomial(n, k) <= EXACT_BUDGET {
        feature_regularity_exact(x, k)?.psi_minus
    } else {
        let sets: Vec<Vec<usize>> = trace
            .selected_sets
            .iter()
            .filter(|s| s.len() == k)
            .cloned()
            .collect();
        feature_regularity_sampled_with(x, k, options.trials, options.seed, &sets)?.psi_minus
    };

    let mut out = Vec::new();
    for t in 0..trace.iterates.len().saturating_sub(1) {
        let theta = &trace.iterates[t];
        let dist = (theta - &target).norm();
        if dist < options.min_distance || dist > 0.5 * sep {
            continue;
        }
        let next = (&trace.iterates[t + 1] - &target).norm();
        let delta = contraction_delta(theta, &truth.theta_star, j).min(1.0);
        let mut pairs = pool.clone();
        let u1 = (&target - theta) / dist;
        for &l in &others {
            let toward = truth.component(l) - theta;
            let norm = toward.norm();
            if norm > 0.0 {
                pairs.push((u1.clone(), toward / norm));
            }
        }
        let affine = problem.estimate(delta, &pairs)?.value;
        let count = (affine + corrupted).min(n);
        let wrong: Vec<usize> = trace.selected_sets[t]
            .iter()
            .copied()
            .filter(|&i| labels[i] != Some(j))
            .collect();
        let (psi_plus, mode) = if count == 0 {
            (0.0, EstimateMode::Exact)
        } else if binomial(n, count) <= EXACT_BUDGET {
            (
                feature_regularity_exact(x, count)?.psi_plus,
                EstimateMode::Exact,
            )
        } else {
            let extra: Vec<Vec<usize>> = if wrong.len() <= count {
                vec![wrong.clone()]
            } else {
                Vec::new()
            };
            let est =
                feature_regularity_sampled_with(x, count, options.trials, options.seed, &extra)?;
            (options.inflation * est.psi_plus, EstimateMode::Sampled)
        };
        let bound = one_step_bound(psi_plus, psi_minus)?;
        out.push(BoundCheck {
            round: t,
            distance: dist,
            delta,
            affine_error: affine,
            wrong_selected: wrong.len(),
            count,
            psi_plus,
            psi_plus_mode: mode,
            psi_minus,
            bound,
            observed: next / dist,
            holds: next <= bound * dist + options.abs_tol,
        });
    }
    Ok(out)
}

/// Quantities requested from the command line, keyed by name in JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub seed: u64,
    pub exact_budget: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_separation: Option<SeparationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularity: Option<RegularityEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine_error: Option<Vec<AffineErrorEstimate>>,
    /// Least-squares `C` in `V(delta) <= C max(delta n, ln n)` over `affine_error`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction_bound: Option<Vec<BoundCheck>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub q: f64,
    pub q_j: Vec<f64>,
}
