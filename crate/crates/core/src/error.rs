use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the embedding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point is off the hyperboloid (|c<x,x> + 1| = {residual:.3e})")]
    OffManifold { residual: f64 },

    #[error("cone apex is the origin; aperture is undefined")]
    DegenerateApex,

    #[error("exterior angle is undefined for coincident points (|(c<x,y>)^2 - 1| = {gap:.3e})")]
    DegeneratePair { gap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("unknown font id {0:?}")]
    UnknownFont(String),

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
