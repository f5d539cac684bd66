//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by graph loading, model construction, training and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown edge id {0}")]
    UnknownEdge(usize),

    #[error("unknown entity id {0}")]
    UnknownEntity(usize),

    #[error("unknown relation id {0}")]
    UnknownRelation(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty positive pool: no trainable edges remain")]
    EmptyPositivePool,

    #[error("empty evaluation split `{0}`")]
    EmptySplit(String),

    #[error("non-finite value in parameter block `{0}`")]
    NonFinite(&'static str),

    #[error("snapshot format error at line {line}: {message}")]
    SnapshotFormat { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
