use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad action range, shape mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The configuration cannot produce a valid scene or run.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    /// The replay buffer holds fewer segments than requested.
    #[error("replay buffer not ready: {available} segments stored, {requested} requested")]
    NotReady { available: usize, requested: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
