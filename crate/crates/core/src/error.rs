use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants map one-to-one onto CLI exit codes (see [`MpcclError::exit_code`]).
#[derive(Debug, Error)]
pub enum MpcclError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerics error: {0}")]
    Numerics(String),
}

impl MpcclError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MpcclError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            MpcclError::Config(_) => 2,
            MpcclError::Numerics(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, MpcclError>;
