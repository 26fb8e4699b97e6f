use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NCurveError>;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum NCurveError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Cholesky factorization failed even after the diagonal jitter retry;
    /// the covariance is degenerate or indefinite.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// The tolerant factorization used for sampling found a clearly negative
    /// pivot; the matrix is not positive semi-definite.
    #[error("covariance matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("{what} = {value} out of range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{what} too short: need at least {min}, got {got}")]
    TooShort {
        what: &'static str,
        min: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset contains no sequences")]
    EmptyDataset,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("ragged sequence in {path} line {line}: {msg}")]
    RaggedSequence {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty file: {path}")]
    EmptyFile { path: PathBuf },

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NCurveError {
    /// Stamp the optimizer iteration onto a non-finite-loss error raised
    /// inside the loss engine (which does not know the iteration count).
    pub fn with_iteration(self, iteration: usize) -> Self {
        match self {
            NCurveError::NonFiniteLoss { detail, .. } => {
                NCurveError::NonFiniteLoss { iteration, detail }
            }
            e => e,
        }
    }
}
