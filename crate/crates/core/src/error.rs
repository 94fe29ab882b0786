use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RelocError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RelocError {
    #[error("depth value must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("depth frame has no valid pixels")]
    NoValidPixels,

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("degenerate quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),

    #[error("embedding dimension mismatch: index holds {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate frame id `{0}`")]
    DuplicateId(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("unknown loss variant `{0}`")]
    UnknownVariant(String),

    #[error("rotation block is not orthonormal (max |RᵀR − I| = {0:e})")]
    NonOrthonormalRotation(f64),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RelocError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RelocError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        RelocError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        RelocError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
