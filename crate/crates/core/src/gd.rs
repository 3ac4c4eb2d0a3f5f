//! Gradient-descent variant of ILTS.
//!
//! The exact refit is replaced by `M_t` gradient steps on the mean squared
//! loss over the trimmed set. With the adaptive schedule the number of steps
//! grows like `log(w / (lambda log(1/lambda)))` as the relative error proxy
//! `lambda` shrinks, where `w` is the cost of one ranking step measured in
//! gradient steps.
//!
//! The contraction factor of one round also carries a term decaying like
//! `exp(-c u)` in the step count `u`; its constants are unspecified and it
//! is not evaluated here.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor_count;
use crate::ilts::{select_trimmed_set, trimmed_loss, validate_common, SolverTrace};
use crate::linalg::power_iteration_lipschitz;
use crate::model::{Dataset, GroundTruth};

/// Power-iteration count used to estimate the step size `1 / L`.
pub const LIPSCHITZ_ITERATIONS: usize = 20;

/// Inner-loop iterates larger than this multiple of `1 + ||theta_start||` are divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    /// Exactly `steps` gradient steps per round.
    Fixed { steps: usize },
    /// `M_t = stopping_steps(lambda_t, w, c_u)`.
    Adaptive {
        w: f64,
        #[serde(default = "default_c_u")]
        c_u: f64,
    },
}

fn default_c_u() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub tau: f64,
    /// Step size. `None` uses `1 / L` estimated on each round's trimmed set.
    #[serde(default)]
    pub eta: Option<f64>,
    pub schedule: Schedule,
    pub max_rounds: usize,
    #[serde(default)]
    pub tol: f64,
}

impl GdConfig {
    pub fn fixed(tau: f64, steps: usize) -> Self {
        Self {
            tau,
            eta: None,
            schedule: Schedule::Fixed { steps },
            max_rounds: 100,
            tol: 0.0,
        }
    }

    pub fn adaptive(tau: f64, w: f64) -> Self {
        Self {
            tau,
            eta: None,
            schedule: Schedule::Adaptive { w, c_u: 1.0 },
            max_rounds: 100,
            tol: 0.0,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        validate_common(self.tau, self.max_rounds, self.tol)?;
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidArgument("eta must be positive".into()));
            }
        }
        match self.schedule {
            Schedule::Fixed { steps: 0 } => Err(Error::InvalidArgument(
                "fixed schedule needs at least one step".into(),
            )),
            Schedule::Adaptive { w, c_u } if !(w > 0.0 && w.is_finite() && c_u > 0.0) => Err(
                Error::InvalidArgument("adaptive schedule needs w > 0 and c_u > 0".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// `M` gradient steps of `(1 / 2|S|) sum_{i in S} (y_i - <x_i, theta>)^2`.
pub fn gd_inner_loop(
    dataset: &Dataset,
    set: &[usize],
    theta_start: &DVector<f64>,
    eta: f64,
    steps: usize,
) -> Result<DVector<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one gradient step".into(),
        ));
    }
    let sub = dataset.subset(set);
    run_steps(&sub, theta_start, eta, steps, |_, _| {})
}

/// Gradient steps on a pre-extracted subset; `observe(step, &theta)` sees
/// every new iterate.
fn run_steps(
    sub: &Dataset,
    theta_start: &DVector<f64>,
    eta: f64,
    steps: usize,
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> Result<DVector<f64>> {
    let (x, y) = (sub.x(), sub.y());
    let scale = eta / sub.n() as f64;
    let limit = DIVERGENCE_FACTOR * (1.0 + theta_start.norm());
    let mut theta = theta_start.clone();
    for step in 0..steps {
        let residual = x * &theta - y;
        theta -= x.tr_mul(&residual) * scale;
        let norm = theta.norm();
        if !(norm <= limit) {
            return Err(Error::Diverged { step, norm });
        }
        observe(step, &theta);
    }
    Ok(theta)
}

/// Step count `max(1, ceil(c_u * ln(w / (lambda ln(1/lambda)))))`.
pub fn stopping_steps(lambda: f64, w: f64, c_u: f64) -> Result<usize> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda = {lambda} is outside (0, 1)"
        )));
    }
    if !(w > 0.0 && c_u > 0.0) {
        return Err(Error::InvalidArgument("w and c_u must be positive".into()));
    }
    let u = (c_u * (w / (lambda * (1.0 / lambda).ln())).ln()).ceil();
    Ok(if u.is_finite() && u >= 1.0 {
        u as usize
    } else {
        1
    })
}

/// Relative-error proxy `lambda_t` used by the adaptive schedule.
///
/// The previous iterate stands in for the unknown target. The value is
/// floored at `ln(n) / n` and capped at `1/e`, the right end of the range
/// where the step count is monotone; the first round has no reference and
/// uses the cap.
pub fn lambda_proxy(current: &DVector<f64>, previous: Option<&DVector<f64>>, n: usize) -> f64 {
    let cap = (-1.0f64).exp();
    let floor = ((n as f64).ln() / n as f64).max(f64::EPSILON).min(cap);
    let raw = match previous {
        Some(prev) if prev.norm() > 0.0 => (current - prev).norm() / prev.norm(),
        _ => cap,
    };
    raw.clamp(floor, cap)
}

/// Run GD-ILTS from `theta0`. Stops on `tol` or after `max_rounds`.
pub fn gd_ilts_run(
    dataset: &Dataset,
    theta0: &DVector<f64>,
    config: &GdConfig,
    truth: Option<&GroundTruth>,
) -> Result<SolverTrace> {
    config.validate()?;
    let n = dataset.n();
    let k = floor_count(config.tau, n);
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "tau = {} retains no samples out of {n}",
            config.tau
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta0".into()));
    }

    let mut theta = theta0.clone();
    let mut previous: Option<DVector<f64>> = None;
    let mut set = select_trimmed_set(dataset, &theta, k)?;
    let mut trace = SolverTrace {
        iterates: vec![theta.clone()],
        selected_sets: vec![set.clone()],
        trimmed_losses: vec![trimmed_loss(dataset, &theta, &set)],
        step_norms: Vec::new(),
        rounds_used: 0,
        converged: false,
        dist_to_nearest: None,
        inner_steps: Some(Vec::new()),
    };

    for _ in 0..config.max_rounds {
        let steps = match config.schedule {
            Schedule::Fixed { steps } => steps,
            Schedule::Adaptive { w, c_u } => {
                stopping_steps(lambda_proxy(&theta, previous.as_ref(), n), w, c_u)?
            }
        };
        let sub = dataset.subset(&set);
        let eta = match config.eta {
            Some(eta) => eta,
            None => {
                let l = power_iteration_lipschitz(sub.x(), LIPSCHITZ_ITERATIONS);
                if l <= 0.0 {
                    return Err(Error::Degenerate("trimmed features are all zero".into()));
                }
                1.0 / l
            }
        };
        let next = run_steps(&sub, &theta, eta, steps, |_, _| {})?;
        let step = (&next - &theta).norm();
        previous = Some(std::mem::replace(&mut theta, next));
        set = select_trimmed_set(dataset, &theta, k)?;
        let loss = trimmed_loss(dataset, &theta, &set);
        trace.push(theta.clone(), step, set.clone(), loss);
        if let Some(v) = trace.inner_steps.as_mut() {
            v.push(steps);
        }
        if step <= config.tol {
            trace.converged = true;
            break;
        }
    }
    trace.attach_truth(truth);
    Ok(trace)
}

/// Mean squared loss over the subset after each of `steps` gradient steps,
/// starting with the loss at `theta_start`.
pub fn inner_loss_path(
    dataset: &Dataset,
    set: &[usize],
    theta_start: &DVector<f64>,
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let sub = dataset.subset(set);
    let loss = |t: &DVector<f64>| (sub.x() * t - sub.y()).norm_squared() / (2.0 * sub.n() as f64);
    let mut path = vec![loss(theta_start)];
    run_steps(&sub, theta_start, eta, steps, |_, t| path.push(loss(t)))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilts::{ilts_run, least_squares, IltsConfig, RankPolicy};
    use crate::linalg::{eigen_extremes, gram};
    use crate::model::{generate_mlrc, CorruptionSpec, MixtureSpec};
    use nalgebra::DMatrix;

    #[test]
    fn single_step_closed_form() {
        let data = Dataset::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let t = gd_inner_loop(&data, &[0], &DVector::zeros(1), 0.5, 1).unwrap();
        assert_eq!(t[0], 0.5);
    }

    #[test]
    fn stationary_at_least_squares() {
        let spec = MixtureSpec::balanced(vec![vec![1.0, 2.0]]);
        let (data, _) = generate_mlrc(&spec, &CorruptionSpec::none(), 20, 2).unwrap();
        let set: Vec<usize> = (0..20).collect();
        let ls = least_squares(&data, &set, RankPolicy::Fail).unwrap();
        let t = gd_inner_loop(&data, &set, &ls, 0.1, 25).unwrap();
        assert!((t - ls).norm() < 1e-12);
    }

    #[test]
    fn long_inner_loop_reaches_least_squares() {
        let spec = MixtureSpec::balanced(vec![vec![1.0, -1.0, 0.5]]);
        let (clean, _) = generate_mlrc(&spec, &CorruptionSpec::none(), 30, 4).unwrap();
        let y = clean.y().map(|v| v + 0.3 * v.sin());
        let data = Dataset::new(clean.x().clone(), y).unwrap();
        let set: Vec<usize> = (0..25).collect();
        let sub = data.subset(&set);
        let l = eigen_extremes(&(gram(sub.x()) / 25.0)).1;
        let t = gd_inner_loop(&data, &set, &DVector::zeros(3), 1.0 / l, 5000).unwrap();
        let ls = least_squares(&data, &set, RankPolicy::Fail).unwrap();
        assert!((t - ls).norm() < 1e-6);
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(matches!(
            gd_inner_loop(&data, &[0], &DVector::zeros(1), 5.0, 100),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn stopping_steps_values() {
        assert_eq!(stopping_steps(0.01, 10.0, 1.0).unwrap(), 6);
        // Interior ~ 10 / (0.99 * 0.01005) ~ 1005, ln ~ 6.91.
        assert_eq!(stopping_steps(0.99, 10.0, 1.0).unwrap(), 7);
        // Log of the interior is negative: clamp to one step.
        assert_eq!(stopping_steps(0.3, 0.01, 1.0).unwrap(), 1);
        assert!(stopping_steps(0.0, 1.0, 1.0).is_err());
        assert!(stopping_steps(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn stopping_steps_monotone_below_inverse_e() {
        let mut prev = usize::MAX;
        for i in 1..=50 {
            let lambda = i as f64 / 51.0 * (-1.0f64).exp();
            let u = stopping_steps(lambda, 10.0, 1.0).unwrap();
            assert!(u <= prev);
            prev = u;
        }
    }

    #[test]
    fn inner_steps_descend_with_small_eta() {
        let spec = MixtureSpec::balanced(vec![vec![2.0, -1.0], vec![-1.0, 0.5]]);
        let (data, _) = generate_mlrc(&spec, &CorruptionSpec::none(), 50, 6).unwrap();
        let set: Vec<usize> = (0..50).step_by(3).collect();
        let sub = data.subset(&set);
        let l = eigen_extremes(&(gram(sub.x()) / set.len() as f64)).1;
        let path =
            inner_loss_path(&data, &set, &DVector::from_element(2, 3.0), 1.0 / l, 40).unwrap();
        assert!(path.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn full_tau_is_plain_gradient_descent() {
        let spec = MixtureSpec::balanced(vec![vec![1.0, 1.0, -1.0]]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 60, 9).unwrap();
        let cfg = GdConfig::fixed(1.0, 1).with_max_rounds(60);
        let trace = gd_ilts_run(&data, &DVector::zeros(3), &cfg, Some(&truth)).unwrap();
        let losses = &trace.trimmed_losses;
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        // Geometric decay: the loss falls by orders of magnitude.
        assert!(losses.last().unwrap() < &(losses[0] * 1e-8));
    }

    #[test]
    fn matches_exact_ilts_with_many_steps() {
        let spec = MixtureSpec::balanced(vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 400, 12).unwrap();
        let theta0 = DVector::from_vec(vec![0.6, 0.0, 0.0]);
        let exact = ilts_run(&data, &theta0, &IltsConfig::new(0.4), Some(&truth)).unwrap();
        let cfg = GdConfig::fixed(0.4, 800)
            .with_tol(1e-13)
            .with_max_rounds(50);
        let gd = gd_ilts_run(&data, &theta0, &cfg, Some(&truth)).unwrap();
        assert!((gd.final_theta() - exact.final_theta()).norm() < 1e-5);
        assert_eq!(gd.inner_steps.as_ref().unwrap().len(), gd.rounds_used);
    }

    #[test]
    fn lambda_proxy_is_clamped() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0 + 1e-9, 0.0]);
        let cap = (-1.0f64).exp();
        assert_eq!(lambda_proxy(&a, None, 100), cap);
        assert_eq!(lambda_proxy(&b, Some(&a), 100), (100f64).ln() / 100.0);
        let far = DVector::from_vec(vec![5.0, 0.0]);
        assert_eq!(lambda_proxy(&far, Some(&a), 100), cap);
    }
}
