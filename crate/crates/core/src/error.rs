use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation / calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented invariant. `field` is a dotted path
    /// into the offending document (e.g. `canyons[2].width_m`).
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config invalid, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid { .. } | Error::Parse { .. } => 2,
            Error::Numerical(_) | Error::InsufficientData(_) => 3,
            Error::Io { .. } => 4,
            Error::Context { source, .. } => source.exit_code(),
        }
    }
}
