use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} with {len} rows")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFinite(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Fusion(_) | Error::Shape(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Index { .. }
            | Error::Checkpoint(_)
            | Error::Sampling(_)
            | Error::Protocol(_) => 2,
            Error::NonFinite(_) | Error::Internal(_) => 3,
        }
    }
}
