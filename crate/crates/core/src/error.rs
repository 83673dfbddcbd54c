use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the mining / alignment pipeline.
#[derive(Debug, Error)]
pub enum FanError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("sample {id}: {message}")]
    InvalidSample { id: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),
}

impl FanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FanError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 numeric/training failure, 2 input error, 3 config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            FanError::Numeric(_) | FanError::Dimension(_) | FanError::Degenerate(_) => 1,
            FanError::Vocabulary { .. }
            | FanError::Parse { .. }
            | FanError::InvalidSample { .. }
            | FanError::Io { .. }
            | FanError::Format(_)
            | FanError::Consistency(_) => 2,
            FanError::Config(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FanError>;
