//! Error type shared by every module, with the process exit code each kind maps to.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller broke an API contract (bad dimension, stepping a finished episode, bad flag).
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("integrity: {0}")]
    Integrity(String),

    /// A non-finite loss or parameter showed up during training.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 6,
            Error::MissingArtifact(_) => 3,
            Error::Integrity(_) => 4,
            Error::Numerical(_) => 5,
            Error::Io { .. } => 3,
            Error::Format(_) => 4,
        }
    }

    /// Short machine-parsable tag for the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Integrity(_) => "integrity",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
        }
    }
}
