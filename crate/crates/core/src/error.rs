//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Toolkit result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A row of an input file could not be parsed.
    #[error("parse error in {file} at row {row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },

    /// Input parsed but violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Constant history: the scale denominator of RMSSE/SPL is zero.
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("feature schema mismatch: model expects {expected:016x}, matrix has {found:016x}")]
    SchemaMismatch { expected: u64, found: u64 },

    #[error("missing {kind}: {key}")]
    Missing { kind: &'static str, key: String },

    /// Training diverged (non-finite loss).
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("corrupt or incompatible file {path}: {message}")]
    Format { path: String, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn missing(kind: &'static str, key: impl Into<String>) -> Self {
        Error::Missing {
            kind,
            key: key.into(),
        }
    }

    /// True for errors caused by bad input data or configuration, as
    /// opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Missing { .. }
                | Error::SchemaMismatch { .. }
        )
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::DegenerateSeries(_) => "degenerate_series",
            Error::Domain(_) => "domain",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::Missing { .. } => "missing",
            Error::Divergence(_) => "divergence",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
        }
    }
}
