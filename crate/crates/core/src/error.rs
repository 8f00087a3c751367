use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("text encoder: {0}")]
    Encoder(String),
    #[error("remote client: {0}")]
    Client(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
