use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Raised by the optimizer; carries the parameter name.
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    /// Raised by training when an objective term stops being finite.
    #[error("non-finite value in loss term `{0}`")]
    NonFiniteLoss(String),

    #[error("invalid copula spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_)
            | Error::Config(_)
            | Error::Usage(_)
            | Error::Contract(_)
            | Error::Dimension(_) => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => 4,
            _ => 3,
        }
    }
}
