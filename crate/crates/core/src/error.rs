use thiserror::Error;

/// Errors produced by the estimators and their supporting machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("degenerate lengthscale in dimension {dim}: all values identical (median distance 0)")]
    DegenerateLengthscale { dim: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("factorization failed: matrix is not positive definite after jitter retry")]
    Factorization,

    #[error("degenerate smoother: a diagonal entry of the leave-one-out matrix is zero")]
    DegenerateSmoother,

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    /// The CLI maps these to exit code 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization | Error::DegenerateSmoother | Error::Tuning(_)
        )
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
