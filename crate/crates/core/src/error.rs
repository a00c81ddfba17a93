use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("state error: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file. `at` names the byte offset or line/column.
    #[error("parse error in {path} at {at}: {msg}")]
    Parse { path: String, at: String, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        let path = path.as_ref();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::Missing(path.to_path_buf());
        }
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
