use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented invariant. `field` is a dotted path
    /// into the offending document (e.g. `segment_shares.workplace`).
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },

    #[error("line {line}, field `{field}`: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("session {id}: {message}")]
    Session { id: String, message: String },

    #[error("no model for segment {0}")]
    MissingModel(String),

    #[error("resolution mismatch: expected dt={expected} min, got dt={actual} min")]
    DtMismatch { expected: u32, actual: u32 },

    #[error("infeasible charging problem: {0}")]
    Infeasible(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("hash mismatch for {what}: recorded {recorded}, found {found}")]
    HashMismatch {
        what: String,
        recorded: String,
        found: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly category, used by the CLI and the HTTP layer.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::Parse { .. } => "parse",
            Error::Session { .. } => "session",
            Error::MissingModel(_) => "missing_model",
            Error::DtMismatch { .. } => "dt_mismatch",
            Error::Infeasible(_) => "infeasible",
            Error::TooLarge(_) => "too_large",
            Error::Numerical(_) => "numerical",
            Error::Version { .. } => "version",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv(_) => "csv",
        }
    }
}
