use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Container or header could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    /// A numeric argument fell outside its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// Shapes or lengths do not line up.
    #[error("size error: {0}")]
    Size(String),

    /// An operation was invoked in the wrong lifecycle state (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// Caller-supplied data violates a documented precondition.
    #[error("input error: {0}")]
    Input(String),

    #[error("unmapped emotion {0:?}: discrete labels must be one of happy, fear, anger, sad, tender")]
    UnmappedEmotion(String),

    #[error("unsupported model variant: {0}")]
    UnsupportedVariant(String),

    /// Training or inference produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Manifest rows that failed to resolve; the whole load is rejected.
    #[error("manifest load failed with {} problem(s):\n{}", .0.len(), .0.join("\n"))]
    Load(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
