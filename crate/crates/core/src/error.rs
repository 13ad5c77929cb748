use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("size guard exceeded: {0}")]
    GuardExceeded(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DgError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DgError::InvalidArgument(msg.into()))
}
