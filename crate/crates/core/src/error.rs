use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance for component {component} is not symmetric positive definite")]
    NotPositiveDefinite { component: usize },

    #[error("infeasible counts: {0}")]
    InfeasibleCounts(String),

    #[error("dataset already carries {0} corrupted samples")]
    AlreadyCorrupted(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("selected set of {rows} rows has rank {rank} < {cols}")]
    RankDeficient {
        rows: usize,
        cols: usize,
        rank: usize,
    },

    #[error("empty index set")]
    EmptySet,

    #[error("gradient iterate diverged at step {step} (norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("exact enumeration needs {needed} subsets, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
