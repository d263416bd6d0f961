use thiserror::Error;

/// Errors produced anywhere in the coverage stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or file was invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure during training (non-finite loss or gradient).
    #[error("training error: {0}")]
    Training(String),

    /// An API contract was violated by the caller (e.g. a stale forward cache).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A produced artifact failed its own checks.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A checkpoint could not be decoded.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
