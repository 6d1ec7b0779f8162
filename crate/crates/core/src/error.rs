use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to load graph {path}: {message}")]
    GraphLoad { path: PathBuf, message: String },

    #[error("backbone `{name}`: {source}")]
    Backbone {
        name: String,
        #[source]
        source: Box<Error>,
    },

    /// A cache or handle was used against a network it did not come from.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }
}
