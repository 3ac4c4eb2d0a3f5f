//! Recovery of every mixture component.
//!
//! The pipeline estimates a low-dimensional subspace that nearly contains
//! all components, samples starting points on a sphere inside it, runs ILTS
//! from each, and accepts a result once enough samples fit it to within
//! `delta`. Accepted samples are removed before searching for the next
//! component.
//!
//! The SVD subspace estimate is only reliable without corruptions; a basis
//! computed elsewhere (for instance by a robust PCA) can be supplied through
//! [`SubspaceEstimate::external`].

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor_count;
use crate::ilts::{ilts_run, tau_grid, IltsConfig, RankPolicy};
use crate::model::{Dataset, GroundTruth};
use crate::parallel;
use crate::recovery::epsilon_recovery;
use crate::rng::{seeded, stream};

/// Orthonormality tolerance of a stored basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Orthonormality tolerance accepted by [`subspace_distance`].
pub const DISTANCE_INPUT_TOL: f64 = 1e-8;
/// Quantile of `|y_i| / ||x_i||` used as the default candidate radius.
pub const RADIUS_QUANTILE: f64 = 0.95;
/// Multiplier `c` in the default threshold `delta = c * eps * sqrt(ln n)`.
pub const DELTA_MULTIPLIER: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Svd,
    External,
}

/// Orthonormal `d x m_tilde` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceEstimate {
    basis: DMatrix<f64>,
    provenance: Provenance,
}

impl SubspaceEstimate {
    /// Wrap a basis computed elsewhere; its columns must already be orthonormal.
    pub fn external(basis: DMatrix<f64>) -> Result<Self> {
        check_basis(&basis, ORTHONORMAL_TOL)?;
        Ok(Self {
            basis,
            provenance: Provenance::External,
        })
    }

    /// Orthonormalize the columns of `span` (which must be linearly independent).
    pub fn from_span(span: &DMatrix<f64>) -> Result<Self> {
        let (d, k) = span.shape();
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "span has {k} columns in dimension {d}"
            )));
        }
        let qr = span.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-12 * scale) {
            return Err(Error::Degenerate(
                "span columns are linearly dependent".into(),
            ));
        }
        Self::external(qr.q())
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn m_tilde(&self) -> usize {
        self.basis.ncols()
    }

    pub fn d(&self) -> usize {
        self.basis.nrows()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `(I - U U^T) v`.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.basis * self.basis.tr_mul(v)
    }
}

fn check_basis(basis: &DMatrix<f64>, tol: f64) -> Result<()> {
    let (d, k) = basis.shape();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "basis has {k} columns in dimension {d}"
        )));
    }
    let gram = basis.tr_mul(basis);
    let off = (gram - DMatrix::<f64>::identity(k, k)).amax();
    if !(off <= tol) {
        return Err(Error::InvalidArgument(format!(
            "basis columns are not orthonormal (max deviation {off:e})"
        )));
    }
    Ok(())
}

/// Top-`m` right singular vectors of the matrix with rows `y_i x_i^T`.
///
/// Each column's largest-magnitude entry is made positive.
pub fn estimate_subspace(dataset: &Dataset, m: usize) -> Result<SubspaceEstimate> {
    let (n, d) = (dataset.n(), dataset.d());
    if m == 0 || m > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension {m} is outside [1, {}]",
            n.min(d)
        )));
    }
    let mut l = dataset.x().clone();
    for (i, mut row) in l.row_iter_mut().enumerate() {
        row *= dataset.y()[i];
    }
    if l.amax() == 0.0 {
        return Err(Error::Degenerate(
            "response-weighted features are all zero".into(),
        ));
    }
    let svd = l.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(d, m);
    for (c, &k) in order.iter().take(m).enumerate() {
        let mut col = v_t.row(k).transpose();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
    }
    Ok(SubspaceEstimate {
        basis,
        provenance: Provenance::Svd,
    })
}

/// `||(I - U_hat U_hat^T) U||_2`, in `[0, 1]`.
pub fn subspace_distance(u_hat: &SubspaceEstimate, u_true: &DMatrix<f64>) -> Result<f64> {
    if u_true.nrows() != u_hat.d() {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimensions {} and {}",
            u_hat.d(),
            u_true.nrows()
        )));
    }
    check_basis(u_hat.basis(), DISTANCE_INPUT_TOL)?;
    check_basis(u_true, DISTANCE_INPUT_TOL)?;
    let proj = u_true - u_hat.basis() * u_hat.basis().tr_mul(u_true);
    Ok(proj.singular_values().max().clamp(0.0, 1.0))
}

/// `ceil((3 R / eps)^m_tilde)`, saturating.
pub fn covering_cap(radius: f64, epsilon: f64, m_tilde: usize) -> usize {
    let v = (3.0 * radius / epsilon).powi(m_tilde as i32).ceil();
    if v.is_finite() && v < usize::MAX as f64 {
        v as usize
    } else {
        usize::MAX
    }
}

/// Points sampled uniformly on the radius-`R` sphere inside the subspace.
///
/// A draw closer than `epsilon` to an earlier candidate is discarded, so the
/// result is `epsilon`-separated. At most `min(budget, covering_cap)`
/// candidates are returned; sampling stops early when the sphere saturates.
pub fn generate_candidates(
    subspace: &SubspaceEstimate,
    radius: f64,
    epsilon: f64,
    budget: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidArgument(
            "candidate budget must be at least 1".into(),
        ));
    }
    check_basis(subspace.basis(), DISTANCE_INPUT_TOL)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let k = subspace.m_tilde();
    let target = budget.min(covering_cap(radius, epsilon, k));
    let max_draws = target.saturating_mul(4).saturating_add(64);
    let mut rng = seeded(seed, stream::CANDIDATES);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(target.min(1 << 16));
    let eps2 = epsilon * epsilon;
    for _ in 0..max_draws {
        if out.len() == target {
            break;
        }
        let z = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        if z.norm() < 1e-12 {
            continue;
        }
        let v = subspace.basis() * z;
        let v = &v * (radius / v.norm());
        if out.iter().any(|c| (c - &v).norm_squared() < eps2) {
            continue;
        }
        out.push(v);
    }
    Ok(out)
}

/// Samples fitting `theta` to within `delta`, and whether there are at
/// least `floor(tau_j n)` of them.
pub fn accept_component(
    dataset: &Dataset,
    theta: &DVector<f64>,
    tau_j: f64,
    delta: f64,
) -> (bool, Vec<usize>) {
    let res = dataset.residuals(theta);
    let bound = delta * delta;
    let set: Vec<usize> = (0..dataset.n())
        .filter(|&i| res[i] * res[i] < bound)
        .collect();
    (set.len() >= floor_count(tau_j, dataset.n()), set)
}

/// 0.95 quantile (nearest rank) of `|y_i| / ||x_i||`.
pub fn default_radius(dataset: &Dataset) -> Result<f64> {
    let mut ratios: Vec<f64> = (0..dataset.n())
        .filter_map(|i| {
            let norm = dataset.x().row(i).norm();
            (norm > 0.0).then(|| dataset.y()[i].abs() / norm)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::Degenerate("all feature rows are zero".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let rank = ((RADIUS_QUANTILE * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len());
    let r = ratios[rank - 1];
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::Degenerate("all responses are zero".into()))
    }
}

/// `delta = 10 * target_accuracy * sqrt(ln n)`.
pub fn default_delta(target_accuracy: f64, n: usize) -> f64 {
    DELTA_MULTIPLIER * target_accuracy * (n.max(2) as f64).ln().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub m: usize,
    /// Retained fraction per component, relative to the working sample count.
    #[serde(default)]
    pub tau_list: Vec<f64>,
    /// Acceptance threshold on absolute residuals.
    pub delta: f64,
    /// Candidate sphere radius. `None` uses [`default_radius`].
    #[serde(default)]
    pub radius: Option<f64>,
    pub candidate_budget: usize,
    pub epsilon_net: f64,
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub tol: f64,
    /// Ratio of the geometric tau grid searched when `tau_list` is empty.
    #[serde(default)]
    pub tau_search: Option<f64>,
}

fn default_rounds() -> usize {
    100
}

impl GlobalConfig {
    pub fn new(
        tau_list: Vec<f64>,
        delta: f64,
        candidate_budget: usize,
        epsilon_net: f64,
        seed: u64,
    ) -> Self {
        Self {
            m: tau_list.len(),
            tau_list,
            delta,
            radius: None,
            candidate_budget,
            epsilon_net,
            seed,
            max_rounds: default_rounds(),
            tol: 0.0,
            tau_search: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if self.tau_list.is_empty() {
            match self.tau_search {
                Some(c) if c > 0.0 && c < 1.0 => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "either tau_list or a tau_search ratio in (0, 1) is required".into(),
                    ))
                }
            }
        } else if self.tau_list.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "{} tau values for m = {}",
                self.tau_list.len(),
                self.m
            )));
        }
        if self.tau_list.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidArgument(
                "every tau_j must lie in (0, 1)".into(),
            ));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument("radius must be positive".into()));
            }
        }
        if self.candidate_budget == 0 {
            return Err(Error::InvalidArgument(
                "candidate budget must be at least 1".into(),
            ));
        }
        if !(self.epsilon_net > 0.0) {
            return Err(Error::InvalidArgument(
                "epsilon_net must be positive".into(),
            ));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one ILTS run from one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub component: usize,
    /// Index into the candidate list.
    pub candidate: usize,
    pub rounds: usize,
    pub accepted: bool,
    /// Size of the sub-threshold set.
    pub support: usize,
    pub tau: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    /// One slot per component search; `None` when the budget ran out.
    pub theta_hat: Vec<Option<DVector<f64>>>,
    /// Accepted sample sets, as indices into the input dataset.
    pub accepted_sets: Vec<Vec<usize>>,
    pub accepted_counts: Vec<usize>,
    pub candidates_tried: Vec<usize>,
    pub taus_used: Vec<Option<f64>>,
    /// Working sample count at the start of each component search.
    pub working_sizes: Vec<usize>,
    /// `perm[j]`: recovered slot matched to true component `j`.
    pub matching: Option<Vec<usize>>,
    pub per_component_errors: Option<Vec<f64>>,
    pub epsilon_recovery: Option<f64>,
    pub partial: bool,
    pub radius: f64,
    /// The radius came from the quantile heuristic rather than the config.
    pub radius_heuristic: bool,
    pub delta: f64,
    pub subspace_provenance: Provenance,
    pub candidates_generated: usize,
    pub outcomes: Vec<CandidateOutcome>,
}

impl RecoveryReport {
    pub fn recovered(&self) -> usize {
        self.theta_hat.iter().filter(|t| t.is_some()).count()
    }

    /// No component was recovered.
    pub fn total_failure(&self) -> bool {
        self.recovered() == 0
    }

    /// `d x m` matrix of estimates when every slot was filled.
    pub fn theta_hat_matrix(&self) -> Option<DMatrix<f64>> {
        let cols: Option<Vec<DVector<f64>>> = self.theta_hat.iter().cloned().collect();
        cols.map(|c| DMatrix::from_columns(&c))
    }
}

struct Attempt {
    outcome: CandidateOutcome,
    theta: Option<DVector<f64>>,
    set: Vec<usize>,
}

fn attempt(
    working: &Dataset,
    start: &DVector<f64>,
    taus: &[f64],
    config: &GlobalConfig,
    component: usize,
    candidate: usize,
) -> Attempt {
    let mut outcome = CandidateOutcome {
        component,
        candidate,
        rounds: 0,
        accepted: false,
        support: 0,
        tau: None,
        error: None,
    };
    for &tau in taus {
        let cfg = IltsConfig {
            tau,
            max_rounds: config.max_rounds,
            tol: config.tol,
            rank_policy: RankPolicy::Fail,
        };
        match ilts_run(working, start, &cfg, None) {
            Ok(trace) => {
                let theta = trace.final_theta().clone();
                let (ok, set) = accept_component(working, &theta, tau, config.delta);
                outcome.rounds += trace.rounds_used;
                outcome.support = set.len();
                outcome.tau = Some(tau);
                outcome.error = None;
                if ok {
                    outcome.accepted = true;
                    return Attempt {
                        outcome,
                        theta: Some(theta),
                        set,
                    };
                }
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
    }
    Attempt {
        outcome,
        theta: None,
        set: Vec::new(),
    }
}

/// Recover all components.
///
/// Candidates are tried in index order. When several run in parallel, the
/// lowest-index acceptor wins, so the result does not depend on the thread
/// count. Budget exhaustion leaves the
/// slot empty and marks the report partial.
pub fn global_ilts(
    dataset: &Dataset,
    config: &GlobalConfig,
    subspace: Option<SubspaceEstimate>,
    truth: Option<&GroundTruth>,
) -> Result<RecoveryReport> {
    config.validate()?;
    let d = dataset.d();
    let subspace = match subspace {
        Some(s) => {
            if s.d() != d {
                return Err(Error::DimensionMismatch(format!(
                    "subspace dimension {} vs features {d}",
                    s.d()
                )));
            }
            s
        }
        None => estimate_subspace(dataset, config.m)?,
    };
    let (radius, radius_heuristic) = match config.radius {
        Some(r) => (r, false),
        None => (default_radius(dataset)?, true),
    };
    let candidates = generate_candidates(
        &subspace,
        radius,
        config.epsilon_net,
        config.candidate_budget,
        config.seed,
    )?;
    let pool = parallel::pool();
    let batch = pool.as_ref().map_or(1, |p| 2 * p.current_num_threads());

    let mut remaining: Vec<usize> = (0..dataset.n()).collect();
    let mut report = RecoveryReport {
        theta_hat: Vec::with_capacity(config.m),
        accepted_sets: Vec::new(),
        accepted_counts: Vec::new(),
        candidates_tried: Vec::new(),
        taus_used: Vec::new(),
        working_sizes: Vec::new(),
        matching: None,
        per_component_errors: None,
        epsilon_recovery: None,
        partial: false,
        radius,
        radius_heuristic,
        delta: config.delta,
        subspace_provenance: subspace.provenance(),
        candidates_generated: candidates.len(),
        outcomes: Vec::new(),
    };

    for j in 0..config.m {
        let working = dataset.subset(&remaining);
        report.working_sizes.push(working.n());
        let taus: Vec<f64> = if config.tau_list.is_empty() {
            let floor = d.max(1) as f64 / working.n().max(1) as f64;
            tau_grid(config.tau_search.expect("validated"), floor)
                .into_iter()
                .filter(|&t| t < 1.0)
                .collect()
        } else {
            vec![config.tau_list[j]]
        };
        let order: Vec<usize> = (0..candidates.len().min(config.candidate_budget)).collect();

        let mut found: Option<Attempt> = None;
        let mut tried = 0;
        for chunk in order.chunks(batch) {
            let run = |&c: &usize| attempt(&working, &candidates[c], &taus, config, j, c);
            let results: Vec<Attempt> = match &pool {
                Some(p) if chunk.len() > 1 => p.install(|| chunk.par_iter().map(run).collect()),
                _ => chunk.iter().map(run).collect(),
            };
            for res in results {
                tried += 1;
                let accepted = res.outcome.accepted;
                report.outcomes.push(res.outcome.clone());
                if accepted {
                    found = Some(res);
                    break;
                }
            }
            if found.is_some() {
                break;
            }
        }
        report.candidates_tried.push(tried);
        match found {
            Some(res) => {
                let original: Vec<usize> = res.set.iter().map(|&w| remaining[w]).collect();
                let drop: std::collections::HashSet<usize> = original.iter().copied().collect();
                remaining.retain(|i| !drop.contains(i));
                report.accepted_counts.push(original.len());
                report.accepted_sets.push(original);
                report.taus_used.push(res.outcome.tau);
                report.theta_hat.push(res.theta);
            }
            None => {
                report.partial = true;
                report.accepted_counts.push(0);
                report.accepted_sets.push(Vec::new());
                report.taus_used.push(None);
                report.theta_hat.push(None);
            }
        }
    }

    if let (Some(truth), Some(hat)) = (truth, report.theta_hat_matrix()) {
        if truth.theta_star.shape() == hat.shape() {
            let (value, perm) = epsilon_recovery(&hat, &truth.theta_star)?;
            report.per_component_errors = Some(
                perm.iter()
                    .enumerate()
                    .map(|(j, &a)| (hat.column(a) - truth.theta_star.column(j)).norm())
                    .collect(),
            );
            report.epsilon_recovery = Some(value);
            report.matching = Some(perm);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_mlrc, CorruptionSpec, MixtureSpec};

    fn unit(d: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    #[test]
    fn distance_basic_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let s = SubspaceEstimate::external(e1.clone()).unwrap();
        assert!(subspace_distance(&s, &e1).unwrap() < 1e-15);
        assert!((subspace_distance(&s, &e2).unwrap() - 1.0).abs() < 1e-15);
        let a = std::f64::consts::FRAC_PI_6;
        let rotated =
            SubspaceEstimate::external(DMatrix::from_column_slice(2, 1, &[a.cos(), a.sin()]))
                .unwrap();
        assert!((subspace_distance(&rotated, &e1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_bad_bases() {
        let s = SubspaceEstimate::external(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let not_unit = DMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        assert!(subspace_distance(&s, &not_unit).is_err());
        let wrong_dim = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(subspace_distance(&s, &wrong_dim).is_err());
        assert!(SubspaceEstimate::external(not_unit).is_err());
    }

    #[test]
    fn subspace_of_zero_responses_is_degenerate() {
        let data = Dataset::new(DMatrix::from_element(4, 2, 1.0), DVector::zeros(4)).unwrap();
        assert!(matches!(
            estimate_subspace(&data, 1),
            Err(Error::Degenerate(_))
        ));
        let data = Dataset::new(
            DMatrix::from_element(4, 2, 1.0),
            DVector::from_element(4, 1.0),
        )
        .unwrap();
        assert!(estimate_subspace(&data, 3).is_err());
    }

    #[test]
    fn single_component_direction() {
        let theta: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 3.0).collect();
        let spec = MixtureSpec::balanced(vec![theta.clone()]);
        let (data, _) = generate_mlrc(&spec, &CorruptionSpec::none(), 5000, 1).unwrap();
        let s = estimate_subspace(&data, 1).unwrap();
        let t = DVector::from_vec(theta);
        let cos = (s.basis().column(0).dot(&t) / t.norm()).abs();
        assert!(cos.min(1.0).acos() < 0.1, "angle {}", cos.acos());
        let basis = s.basis();
        assert!((basis.tr_mul(basis) - DMatrix::<f64>::identity(1, 1)).amax() < 1e-10);
    }

    #[test]
    fn two_orthogonal_components() {
        let spec = MixtureSpec::balanced(vec![unit(10, 0), unit(10, 1)]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 8000, 2).unwrap();
        let s = estimate_subspace(&data, 2).unwrap();
        let u = SubspaceEstimate::from_span(&truth.theta_star).unwrap();
        let dist = subspace_distance(&s, u.basis()).unwrap();
        assert!(dist <= 0.15, "{dist}");
    }

    #[test]
    fn candidates_one_dimensional_sphere() {
        let s =
            SubspaceEstimate::external(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let c = generate_candidates(&s, 1.0, 1.0, 100, 4).unwrap();
        assert_eq!(c.len(), 2);
        assert!((&c[0] + &c[1]).norm() < 1e-12);
    }

    #[test]
    fn candidates_respect_cap_norm_and_span() {
        let span = DMatrix::from_column_slice(4, 2, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 2.0]);
        let s = SubspaceEstimate::from_span(&span).unwrap();
        let c = generate_candidates(&s, 2.0, 0.5, 1_000_000, 7).unwrap();
        assert!(c.len() <= 144);
        assert_eq!(covering_cap(2.0, 0.5, 2), 144);
        for v in &c {
            assert!((v.norm() - 2.0).abs() < 1e-10);
            assert!(s.residual(v).norm() < 1e-10);
        }
        for (a, va) in c.iter().enumerate() {
            for vb in &c[a + 1..] {
                assert!((va - vb).norm() >= 0.5);
            }
        }
        assert!(generate_candidates(&s, 2.0, 0.5, 0, 7).is_err());
        assert_eq!(c, generate_candidates(&s, 2.0, 0.5, 1_000_000, 7).unwrap());
    }

    #[test]
    fn acceptance_is_threshold_exact() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_vec(vec![0.0, 0.5, 1.0, 0.99, 2.0]);
        let data = Dataset::new(x, y).unwrap();
        let (ok, set) = accept_component(&data, &DVector::zeros(1), 0.6, 1.0);
        // Residual exactly 1.0 is not strictly below delta.
        assert_eq!(set, vec![0, 1, 3]);
        assert!(ok, "floor(0.6 * 5) = 3 samples suffice");
        let (ok, _) = accept_component(&data, &DVector::zeros(1), 0.8, 1.0);
        assert!(!ok);
        let (ok, set) = accept_component(&data, &DVector::from_element(1, 100.0), 0.2, 1e-6);
        assert!(!ok && set.is_empty());
    }

    #[test]
    fn accepts_true_component() {
        let spec = MixtureSpec::balanced(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 100, 3).unwrap();
        let (ok, set) = accept_component(&data, &truth.component(0), 0.4, 1e-6);
        assert!(ok);
        for i in truth.clean_members(0) {
            assert!(set.contains(&i));
        }
    }

    #[test]
    fn recovers_single_component() {
        let spec = MixtureSpec::balanced(vec![vec![0.5, -1.0, 2.0]]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 300, 5).unwrap();
        let cfg = GlobalConfig::new(vec![0.8], default_delta(1e-6, 300), 50, 0.1, 5);
        let report = global_ilts(&data, &cfg, None, Some(&truth)).unwrap();
        assert!(!report.partial);
        assert!(report.epsilon_recovery.unwrap() <= 1e-6);
        assert!(report.radius_heuristic);
    }

    #[test]
    fn removal_and_partial_flags() {
        let spec = MixtureSpec::balanced(vec![unit(4, 0), unit(4, 1), unit(4, 2)]);
        let (data, truth) = generate_mlrc(&spec, &CorruptionSpec::none(), 600, 8).unwrap();
        let u = SubspaceEstimate::from_span(&truth.theta_star).unwrap();
        let mut cfg = GlobalConfig::new(vec![0.25; 3], default_delta(1e-6, 600), 200, 0.05, 8);
        cfg.radius = Some(1.0);
        let report = global_ilts(&data, &cfg, Some(u), Some(&truth)).unwrap();
        assert_eq!(report.recovered(), 3);
        assert!(report.epsilon_recovery.unwrap() < 1e-8);
        let mut seen = std::collections::HashSet::new();
        for (j, set) in report.accepted_sets.iter().enumerate() {
            for i in set {
                assert!(seen.insert(*i), "index {i} reused by component {j}");
            }
            if j + 1 < 3 {
                assert_eq!(
                    report.working_sizes[j + 1],
                    report.working_sizes[j] - set.len()
                );
            }
        }

        // A tiny budget with a far-off radius cannot succeed.
        let mut starved = cfg.clone();
        starved.candidate_budget = 1;
        starved.radius = Some(50.0);
        let u = SubspaceEstimate::from_span(&truth.theta_star).unwrap();
        let report = global_ilts(&data, &starved, Some(u), Some(&truth)).unwrap();
        assert!(report.partial);
        assert!(report.epsilon_recovery.is_none());
    }

    #[test]
    fn default_radius_quantile() {
        let x = DMatrix::from_element(20, 1, 1.0);
        let y = DVector::from_fn(20, |i, _| (i + 1) as f64);
        let data = Dataset::new(x, y).unwrap();
        assert_eq!(default_radius(&data).unwrap(), 19.0);
    }
}
