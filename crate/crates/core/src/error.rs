use thiserror::Error;

/// Errors raised by the planning pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("entity `{id}` missing from frame {frame}")]
    MissingEntity { id: String, frame: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Perception(#[from] PerceptionError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Recoverable perceiver failure. The planning loops fall back on history
/// when they see one of these.
#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed perceiver response: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
