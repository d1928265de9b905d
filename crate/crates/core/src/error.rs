use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Contract violations raised by the library. I/O is left to callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("code index {index} out of range for codebook with k = {k}")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl std::fmt::Display) -> Self {
        Error::Format {
            what,
            reason: reason.to_string(),
        }
    }
}
