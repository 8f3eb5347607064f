use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or argument mismatch; the message names the offending dimensions.
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// backward() called on a non-scalar tensor.
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// backward() called on a tensor with no gradient path to any leaf.
    #[error("backward: loss is detached from every differentiable leaf")]
    DetachedLoss,

    /// backward() called twice on the same tensor without a reset.
    #[error("backward: already ran on this tensor; rebuild the graph or reset grads")]
    RepeatedBackward,

    /// A loss or intermediate value became NaN/Inf where finiteness is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
