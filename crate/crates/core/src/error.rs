use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible operand shapes for a tensor operation.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter set has no gradients; run backward and accumulate first")]
    MissingGrads,

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid page: {0}")]
    InvalidPage(String),

    #[error("candidate pool has {have} items, a page needs {need}")]
    PoolTooSmall { have: usize, need: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("environment failure in session {session}: {source}")]
    Env { session: usize, source: Box<Error> },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
