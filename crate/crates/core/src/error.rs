use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data. `context` usually names the file and line.
    #[error("{context}: {message}")]
    Load { context: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// One or more configuration bounds are violated; every violation is listed.
    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("index {index} out of range for {what} of size {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear system is singular or not positive definite (ridge = {ridge})")]
    Singular { ridge: f64 },

    #[error("zero variance in {0}; correlation undefined")]
    ZeroVariance(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn load(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Load { .. }
                | Error::InvalidArgument(_)
                | Error::Validation(_)
                | Error::OutOfRange { .. }
                | Error::Shape(_)
                | Error::Io { .. }
        )
    }
}
