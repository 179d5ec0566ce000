use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(f64),

    #[error("value {value} overflows non-saturating format {format}")]
    Overflow { value: f64, format: String },

    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("unknown format name `{0}`")]
    UnknownFormat(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("numerical abort in layer `{layer}` at column {column}: {detail}")]
    NumericalAbort {
        layer: String,
        column: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
