//! Mixed linear regression instances with corrupted responses.
//!
//! An instance has `m` hidden parameter vectors. Every sample carries a
//! component label and a response `y_i = <x_i, theta_label> + r_i`, where
//! `r_i` is zero outside the corrupted set. Corrupted samples keep their
//! label; the corruption is additive on top of the component measurement.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floor_count;
use crate::rng::{seeded, stream};

/// Feature covariance of one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    /// Diagonal entries, all strictly positive.
    Diagonal(Vec<f64>),
    /// Dense row-major symmetric positive definite matrix.
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    /// Lower Cholesky factor, or `None` for the identity.
    fn factor(&self, d: usize, component: usize) -> Result<Option<DMatrix<f64>>> {
        match self {
            Covariance::Identity => Ok(None),
            Covariance::Diagonal(diag) => {
                if diag.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance of component {component} has {} diagonal entries, expected {d}",
                        diag.len()
                    )));
                }
                if diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::NotPositiveDefinite { component });
                }
                Ok(Some(DMatrix::from_diagonal(&DVector::from_iterator(
                    d,
                    diag.iter().map(|v| v.sqrt()),
                ))))
            }
            Covariance::Full(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance of component {component} must be {d}x{d}"
                    )));
                }
                let mat = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                if mat.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NotPositiveDefinite { component });
                }
                let scale = mat.amax().max(1.0);
                for i in 0..d {
                    for j in 0..i {
                        if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                            return Err(Error::NotPositiveDefinite { component });
                        }
                    }
                }
                let chol = mat
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite { component })?;
                Ok(Some(chol.l()))
            }
        }
    }
}

/// Generative description of the mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub d: usize,
    /// The `m` hidden parameter vectors, each of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Positive mixing weights; normalized internally.
    pub weights: Vec<f64>,
    /// Per-component covariance. Empty means identity for every component.
    #[serde(default)]
    pub covariance: Vec<Covariance>,
}

impl MixtureSpec {
    /// Isotropic mixture with the given weights.
    pub fn isotropic(components: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        let d = components.first().map_or(0, Vec::len);
        Self {
            d,
            components,
            weights,
            covariance: Vec::new(),
        }
    }

    /// Isotropic mixture with equal weights.
    pub fn balanced(components: Vec<Vec<f64>>) -> Self {
        let m = components.len();
        Self::isotropic(components, vec![1.0 / m as f64; m])
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn theta_star(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.m(), |i, j| self.components[j][i])
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("need at least one component".into()));
        }
        for (j, c) in self.components.iter().enumerate() {
            if c.len() != self.d {
                return Err(Error::DimensionMismatch(format!(
                    "component {j} has length {}, expected {}",
                    c.len(),
                    self.d
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {j}")));
            }
        }
        if self.weights.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.m()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        if !self.covariance.is_empty() && self.covariance.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariances for {} components",
                self.covariance.len(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Per-component sample counts by largest remainder; ties go to the lower index.
    fn counts(&self, n: usize) -> Vec<usize> {
        let total: f64 = self.weights.iter().sum();
        let shares: Vec<f64> = self.weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &j in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[j] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adversary {
    None,
    /// Uniformly random indices, Gaussian corruption values.
    ObliviousRandom,
    /// Samples with clean responses nearest zero are moved onto a phantom
    /// component `magnitude * (1, ..., 1) / sqrt(d)`.
    ResidualTargeted,
    /// Random samples of the smallest component, Gaussian corruption values.
    ComponentTargeted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Corrupted count over the size of the smallest component.
    pub gamma_star: f64,
    pub adversary: Adversary,
    /// Standard deviation of Gaussian corruptions, or the phantom norm.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

fn default_magnitude() -> f64 {
    10.0
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self {
            gamma_star: 0.0,
            adversary: Adversary::None,
            magnitude: default_magnitude(),
        }
    }

    pub fn new(gamma_star: f64, adversary: Adversary, magnitude: f64) -> Self {
        Self {
            gamma_star,
            adversary,
            magnitude,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma_star.is_finite() && self.gamma_star >= 0.0) {
            return Err(Error::InvalidArgument(
                "gamma_star must be a nonnegative finite number".into(),
            ));
        }
        if self.adversary == Adversary::None && self.gamma_star != 0.0 {
            return Err(Error::InvalidArgument(
                "adversary `none` requires gamma_star = 0".into(),
            ));
        }
        if !(self.magnitude.is_finite() && self.magnitude > 0.0) {
            return Err(Error::InvalidArgument("magnitude must be positive".into()));
        }
        Ok(())
    }

    /// Number of corrupted samples when the smallest component has `min_count` samples.
    pub fn corrupted_count(&self, min_count: usize) -> usize {
        floor_count(self.gamma_star, min_count)
    }
}

/// Features and responses: the only input the solvers see.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i])),
        }
    }

    /// Residuals `y - X theta`.
    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * theta
    }
}

/// Hidden generative state of an instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `d x m`, one column per component.
    pub theta_star: DMatrix<f64>,
    pub partition: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub r: Vec<f64>,
    /// Fraction of all samples that are uncorrupted members of each component.
    pub tau_star: Vec<f64>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn m(&self) -> usize {
        self.theta_star.ncols()
    }

    pub fn n(&self) -> usize {
        self.partition.len()
    }

    pub fn component(&self, j: usize) -> DVector<f64> {
        self.theta_star.column(j).into_owned()
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|c| **c).count()
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_star.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Realized corrupted count over the smallest clean component size.
    pub fn gamma_star(&self) -> f64 {
        let denom = self.tau_min() * self.n() as f64;
        if denom > 0.0 {
            self.corrupted_count() as f64 / denom
        } else {
            0.0
        }
    }

    /// Indices of uncorrupted samples of component `j`.
    pub fn clean_members(&self, j: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.partition[i] == j && !self.corrupted[i])
            .collect()
    }

    /// `min_j ||theta - theta_j||`.
    pub fn nearest_distance(&self, theta: &DVector<f64>) -> f64 {
        self.theta_star
            .column_iter()
            .map(|c| (theta - c).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest violation of `y_i = <x_i, theta_label> + r_i`, scaled by `1 + |y_i|`.
    pub fn reconstruction_error(&self, data: &Dataset) -> f64 {
        let fitted = data.x() * &self.theta_star;
        (0..data.n())
            .map(|i| {
                let y = data.y()[i];
                (y - fitted[(i, self.partition[i])] - self.r[i]).abs() / (1.0 + y.abs())
            })
            .fold(0.0, f64::max)
    }

    fn recompute_tau(&mut self) {
        let n = self.n() as f64;
        let mut counts = vec![0usize; self.m()];
        for (label, bad) in self.partition.iter().zip(&self.corrupted) {
            if !bad {
                counts[*label] += 1;
            }
        }
        self.tau_star = counts.into_iter().map(|c| c as f64 / n).collect();
    }
}

/// Draw an instance. Identical arguments give bit-identical output.
pub fn generate_mlrc(
    spec: &MixtureSpec,
    corruption: &CorruptionSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    corruption.validate()?;
    let (d, m) = (spec.d, spec.m());
    if n < d {
        return Err(Error::InfeasibleCounts(format!("n = {n} is below d = {d}")));
    }
    let counts = spec.counts(n);
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InfeasibleCounts(format!(
            "component {j} receives no samples at n = {n}"
        )));
    }
    let min_count = *counts.iter().min().expect("m >= 1");
    if corruption.corrupted_count(min_count) > n {
        return Err(Error::InfeasibleCounts(format!(
            "{} corruptions exceed n = {n}",
            corruption.corrupted_count(min_count)
        )));
    }

    let factors = if spec.covariance.is_empty() {
        vec![None; m]
    } else {
        spec.covariance
            .iter()
            .enumerate()
            .map(|(j, c)| c.factor(d, j))
            .collect::<Result<Vec<_>>>()?
    };

    let mut partition: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
        .collect();
    partition.shuffle(&mut seeded(seed, stream::ASSIGNMENT));

    let theta_star = spec.theta_star();
    let mut rng = seeded(seed, stream::FEATURES);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let j = partition[i];
        let row = match &factors[j] {
            Some(l) => l * &z,
            None => z.clone(),
        };
        x.row_mut(i).copy_from(&row.transpose());
        y[i] = row.dot(&theta_star.column(j));
    }

    let clean = Dataset::new(x, y)?;
    let mut truth = GroundTruth {
        theta_star,
        partition,
        corrupted: vec![false; n],
        r: vec![0.0; n],
        tau_star: Vec::new(),
        seed,
    };
    truth.recompute_tau();
    inject_corruptions(&clean, &truth, corruption, seed)
}

/// Corrupt a clean instance according to `corruption`.
///
/// Uncorrupted rows are returned bitwise unchanged.
pub fn inject_corruptions(
    dataset: &Dataset,
    truth: &GroundTruth,
    corruption: &CorruptionSpec,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    corruption.validate()?;
    let n = dataset.n();
    if truth.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "truth covers {} samples, dataset has {n}",
            truth.n()
        )));
    }
    if truth.corrupted_count() > 0 {
        return Err(Error::AlreadyCorrupted(truth.corrupted_count()));
    }
    let mut counts = vec![0usize; truth.m()];
    for &label in &truth.partition {
        counts[label] += 1;
    }
    let min_count = counts.iter().copied().min().unwrap_or(0);
    let k = corruption.corrupted_count(min_count);
    if k == 0 || corruption.adversary == Adversary::None {
        let mut truth = truth.clone();
        truth.recompute_tau();
        return Ok((dataset.clone(), truth));
    }
    if k > n {
        return Err(Error::InfeasibleCounts(format!(
            "{k} corruptions exceed n = {n}"
        )));
    }

    let mut rng = seeded(seed, stream::CORRUPTION);
    let gaussian = Normal::new(0.0, corruption.magnitude)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut r = vec![0.0; n];
    let chosen: Vec<usize> = match corruption.adversary {
        Adversary::None => unreachable!(),
        Adversary::ObliviousRandom => {
            let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            for &i in &idx {
                r[i] = gaussian.sample(&mut rng);
            }
            idx
        }
        Adversary::ResidualTargeted => {
            let y = dataset.y();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()).then(a.cmp(&b)));
            let mut idx = order[..k].to_vec();
            idx.sort_unstable();
            let d = dataset.d();
            let phantom = DVector::from_element(d, corruption.magnitude / (d as f64).sqrt());
            for &i in &idx {
                r[i] = dataset.x().row(i).transpose().dot(&phantom) - y[i];
            }
            idx
        }
        Adversary::ComponentTargeted => {
            let smallest = (0..counts.len())
                .min_by_key(|&j| (counts[j], j))
                .expect("m >= 1");
            let members: Vec<usize> = (0..n).filter(|&i| truth.partition[i] == smallest).collect();
            if k > members.len() {
                return Err(Error::InfeasibleCounts(format!(
                    "{k} corruptions exceed the {} samples of component {smallest}",
                    members.len()
                )));
            }
            let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), k)
                .into_iter()
                .map(|p| members[p])
                .collect();
            idx.sort_unstable();
            for &i in &idx {
                r[i] = gaussian.sample(&mut rng);
            }
            idx
        }
    };

    let mut y = dataset.y().clone();
    let mut out = truth.clone();
    for &i in &chosen {
        y[i] += r[i];
        out.corrupted[i] = true;
        out.r[i] = r[i];
    }
    out.recompute_tau();
    Ok((Dataset::new(dataset.x().clone(), y)?, out))
}

/// Uniform unit vector in `R^d`.
pub(crate) fn random_unit<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Seeded point on the sphere of radius `scale` in `R^d`.
pub fn random_start(d: usize, scale: f64, seed: u64) -> DVector<f64> {
    random_unit(&mut seeded(seed, stream::START), d) * scale
}
