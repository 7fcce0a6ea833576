//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate fell outside a tensor's domain.
    #[error("coordinate {coord} out of domain {domain} on axis {axis}")]
    OutOfDomain {
        axis: &'static str,
        coord: i64,
        domain: String,
    },

    /// An operation's precondition on shapes or units does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Tensor or feature-map shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
