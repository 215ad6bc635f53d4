use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),

    #[error("dangling id {id:?} in comparison #{index}")]
    DanglingId { index: usize, id: String },

    #[error("self-comparison of {id:?} in comparison #{index}")]
    SelfComparison { index: usize, id: String },

    #[error("item {id:?} has feature dimension {found}, expected {expected}")]
    FeatureDimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("item {id:?} has a non-finite {what}")]
    NonFinite { id: String, what: &'static str },

    #[error("invalid outcome {0}; expected -1, 0 or 1")]
    InvalidOutcome(i64),

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("duplicate rating for respondent/item pairs: {0:?}")]
    DuplicateRatings(Vec<(String, String)>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateItem(_) => "duplicate_item",
            Error::DanglingId { .. } => "dangling_id",
            Error::SelfComparison { .. } => "self_comparison",
            Error::FeatureDimension { .. } => "feature_dimension",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidOutcome(_) => "invalid_outcome",
            Error::UnknownItem(_) => "unknown_item",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::DuplicateRatings(_) => "duplicate_ratings",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
