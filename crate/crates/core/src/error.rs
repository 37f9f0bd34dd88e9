use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A prescribed hyperparameter precondition does not hold.
    #[error("schedule constraint violated ({constraint}): {detail}")]
    Constraint {
        constraint: &'static str,
        detail: String,
    },

    /// Configuration rejected; `pointer` is the JSON pointer of the offending field.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("every seed diverged at T = {horizon}")]
    AllDiverged { horizon: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
