use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("stale or mismatched state: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for usage/configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
