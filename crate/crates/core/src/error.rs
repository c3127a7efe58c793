use std::path::PathBuf;

/// Errors produced by the navigation, learning and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain where an operation is defined
    /// (polar singularity, gimbal lock, bad step size, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input data (ordering, lengths, frames).
    #[error("invalid input: {0}")]
    Input(String),

    /// Configuration values that fail validation.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Malformed record in a CSV or sidecar file.
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    /// NaN/inf encountered in a numerical pipeline.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
