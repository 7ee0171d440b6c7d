use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("id {id} out of range (size {size})")]
    IdOutOfRange { id: u32, size: usize },

    #[error("sequence too long for {what}: {len} > {max}")]
    TooLong { what: &'static str, len: usize, max: usize },

    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("malformed {what} at record {index}: {detail}")]
    Record { what: &'static str, index: u64, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("{path}: {source}")]
    Path { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    pub fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { key: key.into(), detail: detail.into() }
    }

    pub fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::Path { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
