use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary or text file. `offset` is the byte offset where
    /// decoding failed, when known.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("zero-norm embedding row for sample `{0}`")]
    ZeroNorm(String),

    #[error("cache is empty")]
    EmptyCache,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit status: 2 usage/config, 3 data/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Config(_) | Error::DimensionMismatch(_) => 2,
            Error::Format { .. } | Error::Data(_) | Error::ZeroNorm(_) | Error::EmptyCache => 3,
            Error::Numerical(_) => 4,
        }
    }
}
