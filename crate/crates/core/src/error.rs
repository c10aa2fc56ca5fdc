use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {}x{}, right is {}x{}", .left.0, .left.1, .right.0, .right.1)]
    Shape {
        op: String,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFinite { epoch: usize, component: String },

    #[error("unsupported artifact version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("truncated artifact: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("artifact tensor {name} has shape {}x{}, expected {}x{}", .found.0, .found.1, .expected.0, .expected.1)]
    ArtifactShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("artifact payload checksum mismatch")]
    Checksum,

    #[error("malformed artifact header: {0}")]
    Header(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op: op.into(),
            left,
            right,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
