use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("training diverged at step {step} (lr {lr:e}, batch {batch}): {reason}")]
    Diverged {
        step: usize,
        lr: f64,
        batch: usize,
        reason: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::ZeroVariance(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
