use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{what}`: expected {expected:?}, found {found:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {msg}")]
    Codec { path: PathBuf, msg: String },

    #[error("{path}: missing {what}")]
    Missing { path: PathBuf, what: String },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            what,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
