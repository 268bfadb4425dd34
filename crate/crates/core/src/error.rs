use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {key}: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("room geometry: {0}")]
    Room(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error("wav {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("io {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SignalTooShort { .. } => "signal_too_short",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::NonFinite(_) => "non_finite",
            Error::Room(_) => "room",
            Error::Scene(_) => "scene",
            Error::Metric(_) => "metric",
            Error::Trace(_) => "trace",
            Error::Wav { .. } => "wav",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
