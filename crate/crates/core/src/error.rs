use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition of the caller was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The finite-difference oracle could not evaluate the function.
    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("load error in {record}: {detail}")]
    Load { record: String, detail: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(record: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Load {
            record: record.into(),
            detail: detail.into(),
        }
    }
}
