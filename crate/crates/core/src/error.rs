use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: every column needs at least one unmasked entry (column {column})")]
    DegenerateMask { op: &'static str, column: usize },

    #[error("{op}: nothing to pool over")]
    DegeneratePool { op: &'static str },

    #[error("{0}: empty sequence")]
    EmptySequence(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{}:{line}: {msg}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("corrupt checkpoint at byte {offset}: {msg}")]
    CorruptCheckpoint { offset: usize, msg: String },

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
