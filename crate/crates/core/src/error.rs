use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// `Validation` covers bad inputs (malformed files, violated preconditions);
/// everything else is a runtime failure. The CLI maps the two groups onto
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed MetaImage header: {0}")]
    Header(String),

    #[error("unsupported element type `{0}`")]
    UnsupportedElementType(String),

    #[error("payload size mismatch: header declares {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty surface: {0}")]
    EmptySurface(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by invalid inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Csv(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
