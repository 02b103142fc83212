use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing modality `{0}`")]
    MissingModality(String),
    #[error("autodiff: {0}")]
    Autodiff(String),
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),
    #[error("user {user}: K={k} exceeds {candidates} candidate items")]
    TooFewCandidates {
        user: usize,
        k: usize,
        candidates: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
