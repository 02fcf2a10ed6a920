use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty block")]
    EmptyBlock,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("block partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("length mismatch: header declares {expected} elements, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite element at index {index}")]
    NonFinite { index: usize },

    #[error("forward cache missing: call forward in train mode before backward")]
    MissingCache,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Io(io::Error::other(format!("{other:?}"))),
        }
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Whether this error came from the file system rather than from bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
