use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("solver did not converge: {0}")]
    Convergence(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
