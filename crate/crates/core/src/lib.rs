//! Iterative least trimmed squares (ILTS) for mixed linear regression with
//! adversarially corrupted responses.
//!
//! The crate is organized around the pieces of the method:
//!
//! - [`model`]: seeded instance generation and adversaries.
//! - [`ilts`]: the alternating trim / refit solver for one component.
//! - [`gd`]: the same outer loop with gradient steps instead of exact refits.
//! - [`global`]: subspace estimation, candidate search and sample removal
//!   to recover every component, plus the permutation-matched error.
//! - [`diagnostics`]: separation, feature regularity and affine error
//!   estimates used to check the contraction bound empirically.
//! - [`io`]: CSV / JSON formats shared with the command-line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod gd;
pub mod global;
pub mod ilts;
pub mod io;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod recovery;
pub mod rng;

pub use error::{Error, Result};
pub use gd::{gd_ilts_run, gd_inner_loop, stopping_steps, GdConfig, Schedule};
pub use global::{
    accept_component, estimate_subspace, generate_candidates, global_ilts, subspace_distance,
    GlobalConfig, Provenance, RecoveryReport, SubspaceEstimate,
};
pub use ilts::{
    contraction_ratio, ilts_run, least_squares, select_trimmed_set, trimmed_loss, IltsConfig,
    RankPolicy, SolverTrace,
};
pub use model::{
    generate_mlrc, inject_corruptions, random_start, Adversary, CorruptionSpec, Covariance,
    Dataset, GroundTruth, MixtureSpec,
};
pub use recovery::epsilon_recovery;

/// `floor(fraction * count)`, robust to products that land a few ulps
/// below an integer (e.g. `0.29 * 100`).
pub fn floor_count(fraction: f64, count: usize) -> usize {
    let v = fraction * count as f64;
    if v <= 0.0 {
        0
    } else {
        (v + 1e-9).floor() as usize
    }
}
