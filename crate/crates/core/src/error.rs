use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("batchnorm2d: train mode needs at least 2 values per channel, got {count}")]
    DegenerateVariance { count: usize },

    #[error("backward: root is not a scalar (shape {shape:?})")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("backward: graph already consumed; create a fresh tape")]
    GraphConsumed,

    #[error("adam: non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("phantom geometry: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("dataset too small: {have} frames, need at least {need}")]
    DatasetTooSmall { have: usize, need: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("{path}: format error at byte offset {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
