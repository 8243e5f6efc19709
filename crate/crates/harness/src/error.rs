use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(vlmpc_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn from_path(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let field = e.path().to_string();
        Error::config(field, e.into_inner().to_string())
    }

    /// Whether the failure is a bad config rather than a runtime problem.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Core(vlmpc_core::Error::InvalidInput(_) | vlmpc_core::Error::MissingEntity { .. })
        )
    }
}

impl From<vlmpc_core::Error> for Error {
    fn from(e: vlmpc_core::Error) -> Self {
        match e {
            vlmpc_core::Error::Config { field, reason } => Error::Config { field, reason },
            other => Error::Core(other),
        }
    }
}
