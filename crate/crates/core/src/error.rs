use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("window underflow in {op}: need at least {needed} frames, got {got}")]
    WindowUnderflow {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("window overflow in {op}: expected exactly {expected} frames, got {got}")]
    WindowOverflow {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
