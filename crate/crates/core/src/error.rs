use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("index {index} out of range for {len} elements")]
    Index { index: usize, len: usize },

    #[error("all input points are collinear")]
    Collinear,

    #[error("no path between vertices {from} and {to}")]
    NoPath { from: usize, to: usize },

    #[error("route sampling exhausted after {} attempts: {stats}", stats.attempts)]
    Exhausted { stats: crate::route::RejectionStats },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
