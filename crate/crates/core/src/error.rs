use thiserror::Error;

/// Errors produced by the memory model and its numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CribError {
    /// A value lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed arguments: wrong lengths, parity, ordering.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A numerical procedure failed or produced unusable output.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Reading or writing a binary dump failed.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CribError {
    fn from(e: std::io::Error) -> Self {
        CribError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CribError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CribError::Domain(msg.into()))
}

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(CribError::Argument(msg.into()))
}
