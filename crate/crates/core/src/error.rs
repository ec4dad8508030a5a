use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("cascade {cascade}: {msg}")]
    Structure { cascade: String, msg: String },

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("missing embedding for node `{0}`")]
    MissingEmbedding(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("width mismatch for {what}: checkpoint has {checkpoint}, config has {config}")]
    WidthMismatch { what: String, checkpoint: usize, config: usize },

    #[error("solver exceeded {max_steps} steps integrating [{t0}, {t1}]")]
    Divergence { max_steps: usize, t0: f64, t1: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss on cascade {cascade}: {detail}")]
    NonFiniteLoss { cascade: String, detail: String },

    #[error("non-positive intensity {0} in likelihood")]
    NonPositiveIntensity(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::WidthMismatch { .. } => ErrorKind::Usage,
            Error::Divergence { .. }
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::NonPositiveIntensity(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
