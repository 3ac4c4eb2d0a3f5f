//! Configuration files. All are JSON with a `version` field.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use trimfit::{
    random_start, CorruptionSpec, GdConfig, GlobalConfig, GroundTruth, IltsConfig, MixtureSpec,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mixture: MixtureSpec,
    #[serde(default = "CorruptionSpec::none")]
    pub corruption: CorruptionSpec,
    pub n: usize,
    pub seed: u64,
}

/// Input of `generate`. Any experiment config with a `model` also works.
#[derive(Clone, Debug, Deserialize)]
pub struct GenerateConfig {
    pub version: u32,
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta0Spec {
    Zeros,
    Explicit(Vec<f64>),
    /// `theta_component + fraction * (theta_toward - theta_component)`.
    NearComponent {
        component: usize,
        toward: usize,
        fraction: f64,
    },
    /// Seeded point on a sphere of radius `scale`.
    Random {
        scale: f64,
    },
}

impl Theta0Spec {
    pub fn resolve(
        &self,
        d: usize,
        truth: Option<&GroundTruth>,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let theta = match self {
            Theta0Spec::Zeros => DVector::zeros(d),
            Theta0Spec::Explicit(v) => {
                if v.len() != d {
                    bail!("theta0 has {} entries, dataset has d = {d}", v.len());
                }
                DVector::from_column_slice(v)
            }
            Theta0Spec::NearComponent {
                component,
                toward,
                fraction,
            } => {
                let truth = truth.context("theta0 near_component needs ground truth")?;
                if *component >= truth.m() || *toward >= truth.m() {
                    bail!("theta0 component index out of range (m = {})", truth.m());
                }
                let a = truth.component(*component);
                let b = truth.component(*toward);
                &a + (b - &a) * *fraction
            }
            Theta0Spec::Random { scale } => random_start(d, *scale, seed),
        };
        Ok(theta)
    }

    /// Component the start is aimed at, when there is one.
    pub fn target(&self) -> Option<usize> {
        match self {
            Theta0Spec::NearComponent { component, .. } => Some(*component),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SolverSpec {
    Ilts {
        config: IltsConfig,
        theta0: Theta0Spec,
    },
    GdIlts {
        config: GdConfig,
        theta0: Theta0Spec,
    },
    Global {
        config: GlobalConfig,
        /// Use the orthonormalized true components as the subspace.
        #[serde(default)]
        subspace_from_truth: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "quantity")]
pub enum Quantity {
    QSeparation,
    Regularity {
        /// Subset size as a fraction of n.
        k_fraction: f64,
        trials: usize,
    },
    AffineError {
        component: usize,
        /// `tau_j = c * tau*_j`.
        #[serde(default = "default_tau_fraction")]
        tau_fraction: f64,
        deltas: Vec<f64>,
        directions: usize,
    },
    /// Per-round comparison with the one-step contraction bound (ILTS only).
    ContractionBound {
        component: usize,
        trials: usize,
        directions: usize,
    },
}

pub fn default_tau_fraction() -> f64 {
    0.8
}

fn default_repeats() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub solver: SolverSpec,
    #[serde(default)]
    pub diagnostics: Vec<Quantity>,
    pub output_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
    {
        bail!("name {name:?} must be non-empty and use only [A-Za-z0-9._-]");
    }
    Ok(())
}

fn check_version(version: u32) -> Result<()> {
    if version != CONFIG_VERSION {
        bail!("unsupported config version {version} (expected {CONFIG_VERSION})");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        check_name(&self.name)?;
        match (&self.model, &self.dataset) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => bail!("exactly one of `model` and `dataset` must be given"),
        }
        if self.model.is_some() && self.truth.is_some() {
            bail!("`truth` is only used together with `dataset`");
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        Ok(())
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        check_name(&self.name)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Parse `"1,2.5,-3"`.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("not a number: {s:?}"))
        })
        .collect()
}
