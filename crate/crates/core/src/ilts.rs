//! Iterative least trimmed squares for a single component.
//!
//! Each round keeps the `floor(tau * n)` samples with the smallest squared
//! residuals under the current estimate and refits exact least squares on
//! them. Both half-steps can only lower the trimmed loss
//! `a(theta, S) = sum_{i in S} (y_i - <x_i, theta>)^2`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor_count;
use crate::linalg::solve_least_squares;
pub use crate::linalg::RankPolicy;
use crate::model::{Dataset, GroundTruth};

/// Contraction ratios with a smaller denominator are treated as converged.
pub const CONVERGED_DISTANCE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IltsConfig {
    /// Retained fraction in `(0, 1]`.
    pub tau: f64,
    pub max_rounds: usize,
    /// Stop once `||theta_{t+1} - theta_t|| <= tol`.
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub rank_policy: RankPolicy,
}

impl IltsConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            max_rounds: 100,
            tol: 0.0,
            rank_policy: RankPolicy::Fail,
        }
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_rank_policy(mut self, rank_policy: RankPolicy) -> Self {
        self.rank_policy = rank_policy;
        self
    }

    /// Retained count for a dataset of `n` samples and `d` features.
    pub(crate) fn retained(&self, n: usize, d: usize) -> Result<usize> {
        validate_common(self.tau, self.max_rounds, self.tol)?;
        let k = floor_count(self.tau, n);
        if k == 0 {
            return Err(Error::InvalidArgument(format!(
                "tau = {} retains no samples out of {n}",
                self.tau
            )));
        }
        if self.rank_policy == RankPolicy::Fail && k < d {
            return Err(Error::RankDeficient {
                rows: k,
                cols: d,
                rank: k,
            });
        }
        Ok(k)
    }
}

pub(crate) fn validate_common(tau: f64, max_rounds: usize, tol: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} is outside (0, 1]"
        )));
    }
    if max_rounds == 0 {
        return Err(Error::InvalidArgument("max_rounds must be positive".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument("tol must be nonnegative".into()));
    }
    Ok(())
}

/// Per-round record of a solver run.
///
/// `iterates[t]`, `selected_sets[t]` and `trimmed_losses[t]` describe round
/// `t`; the last entry is the final iterate with its own trimmed set.
/// `step_norms[t] = ||iterates[t + 1] - iterates[t]||`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub iterates: Vec<DVector<f64>>,
    pub selected_sets: Vec<Vec<usize>>,
    pub trimmed_losses: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub rounds_used: usize,
    /// Stopped on tolerance or a repeated trimmed set rather than `max_rounds`.
    pub converged: bool,
    /// `min_j ||theta_t - theta_j||` per iterate, when ground truth was given.
    pub dist_to_nearest: Option<Vec<f64>>,
    /// Gradient steps used in each round (gradient variant only).
    pub inner_steps: Option<Vec<usize>>,
}

impl SolverTrace {
    fn start(theta0: DVector<f64>, set: Vec<usize>, loss: f64) -> Self {
        Self {
            iterates: vec![theta0],
            selected_sets: vec![set],
            trimmed_losses: vec![loss],
            step_norms: Vec::new(),
            rounds_used: 0,
            converged: false,
            dist_to_nearest: None,
            inner_steps: None,
        }
    }

    pub(crate) fn push(&mut self, theta: DVector<f64>, step: f64, set: Vec<usize>, loss: f64) {
        self.iterates.push(theta);
        self.step_norms.push(step);
        self.selected_sets.push(set);
        self.trimmed_losses.push(loss);
        self.rounds_used += 1;
    }

    pub(crate) fn attach_truth(&mut self, truth: Option<&GroundTruth>) {
        self.dist_to_nearest = truth.map(|t| {
            self.iterates
                .iter()
                .map(|th| t.nearest_distance(th))
                .collect()
        });
    }

    pub fn final_theta(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace holds theta0")
    }

    /// First round whose trimmed loss exceeds its predecessor by more than
    /// `rel_slack * (1 + previous)`.
    pub fn descent_violation(&self, rel_slack: f64) -> Option<usize> {
        self.trimmed_losses
            .windows(2)
            .position(|w| w[1] > w[0] + rel_slack * (1.0 + w[0].abs()))
            .map(|t| t + 1)
    }
}

/// Squared residuals, rejecting non-finite values.
pub(crate) fn squared_residuals(dataset: &Dataset, theta: &DVector<f64>) -> Result<Vec<f64>> {
    if theta.len() != dataset.d() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, expected {}",
            theta.len(),
            dataset.d()
        )));
    }
    let res: Vec<f64> = dataset.residuals(theta).iter().map(|r| r * r).collect();
    if let Some(i) = res.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("residual of sample {i}")));
    }
    Ok(res)
}

/// The `k` samples with smallest squared residual, ascending by index.
///
/// Ties are broken toward the smaller sample index.
pub fn select_trimmed_set(dataset: &Dataset, theta: &DVector<f64>, k: usize) -> Result<Vec<usize>> {
    let n = dataset.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} is outside [1, {n}]"
        )));
    }
    let res = squared_residuals(dataset, theta)?;
    Ok(smallest_k(&res, k))
}

pub(crate) fn smallest_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| {
            values[a].total_cmp(&values[b]).then(a.cmp(&b))
        });
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// `a(theta, S)`.
pub fn trimmed_loss(dataset: &Dataset, theta: &DVector<f64>, set: &[usize]) -> f64 {
    let x = dataset.x();
    let y = dataset.y();
    set.iter()
        .map(|&i| {
            let r = y[i] - x.row(i).transpose().dot(theta);
            r * r
        })
        .sum()
}

/// Least squares on the rows in `set`.
pub fn least_squares(dataset: &Dataset, set: &[usize], policy: RankPolicy) -> Result<DVector<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= dataset.n()) {
        return Err(Error::InvalidArgument(format!("index {bad} out of range")));
    }
    let sub = dataset.subset(set);
    solve_least_squares(sub.x(), sub.y(), policy)
}

/// Run ILTS from `theta0`.
///
/// Stops when the step norm falls to `tol`, when the trimmed set repeats
/// (the next refit would reproduce the current iterate), when the trimmed
/// loss fails to decrease strictly, or after `max_rounds` refits.
///
/// An exact refit never raises the trimmed loss, so a non-decrease means
/// both half-steps are stationary up to rounding. This catches cycles
/// between tied sets whose residuals are all at round-off level.
pub fn ilts_run(
    dataset: &Dataset,
    theta0: &DVector<f64>,
    config: &IltsConfig,
    truth: Option<&GroundTruth>,
) -> Result<SolverTrace> {
    let k = config.retained(dataset.n(), dataset.d())?;
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta0".into()));
    }
    let mut theta = theta0.clone();
    let mut set = select_trimmed_set(dataset, &theta, k)?;
    let mut trace = SolverTrace::start(
        theta.clone(),
        set.clone(),
        trimmed_loss(dataset, &theta, &set),
    );

    for _ in 0..config.max_rounds {
        let next = least_squares(dataset, &set, config.rank_policy)?;
        let step = (&next - &theta).norm();
        theta = next;
        let next_set = select_trimmed_set(dataset, &theta, k)?;
        let loss = trimmed_loss(dataset, &theta, &next_set);
        let repeated = next_set == set;
        let stalled = loss >= *trace.trimmed_losses.last().expect("trace holds theta0");
        trace.push(theta.clone(), step, next_set.clone(), loss);
        if step <= config.tol || repeated || stalled {
            trace.converged = true;
            break;
        }
        set = next_set;
    }
    trace.attach_truth(truth);
    Ok(trace)
}

/// Observed per-round contraction toward component `j`.
///
/// Rounds whose starting distance is below [`CONVERGED_DISTANCE`] are skipped.
pub fn contraction_ratio(trace: &SolverTrace, truth: &GroundTruth, j: usize) -> Vec<f64> {
    let target = truth.component(j);
    let dist: Vec<f64> = trace
        .iterates
        .iter()
        .map(|t| (t - &target).norm())
        .collect();
    dist.windows(2)
        .filter(|w| w[0] >= CONVERGED_DISTANCE)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Geometric grid `1, ratio, ratio^2, ...` down to `floor` (inclusive).
///
/// One of these values falls in `[ratio * tau_j, tau_j)` for any true
/// fraction `tau_j > floor`.
pub fn tau_grid(ratio: f64, floor: f64) -> Vec<f64> {
    assert!(ratio > 0.0 && ratio < 1.0, "grid ratio must lie in (0, 1)");
    let mut out = Vec::new();
    let mut t = 1.0;
    while t >= floor && t > 0.0 {
        out.push(t);
        t *= ratio;
    }
    out
}
