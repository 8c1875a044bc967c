use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
