use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range or has the wrong shape.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An input violates a documented precondition (e.g. a non-symmetric matrix
    /// passed to the symmetric eigensolver).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A function under evaluation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    /// Superpixel map and feature grid cannot be aligned.
    #[error("resolution mismatch: {0}")]
    Resolution(String),

    /// A decoded object breaks one of its type invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
