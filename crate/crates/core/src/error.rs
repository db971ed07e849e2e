use std::path::PathBuf;

use thiserror::Error;
use trimodal_autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },

    #[error("empty modality subset")]
    EmptySubset,

    #[error("derangement undefined for size {0}")]
    DerangementUndefined(usize),

    #[error("batch size {got} too small, need at least {need}")]
    BatchTooSmall { need: usize, got: usize },

    #[error("pool of {got} items too small, need at least {need}")]
    PoolTooSmall { need: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used in machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Autodiff(_) => "autodiff",
            Error::Config(_) => "config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptySubset => "empty_subset",
            Error::DerangementUndefined(_) => "derangement_undefined",
            Error::BatchTooSmall { .. } => "batch_too_small",
            Error::PoolTooSmall { .. } => "pool_too_small",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::CorruptArtifact(_) => "corrupt_artifact",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
