use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("integrity error: missing parameter `{0}`")]
    Integrity(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("render error: {0}")]
    Render(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
