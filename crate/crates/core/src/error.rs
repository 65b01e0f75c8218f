use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes. The CLI maps these onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Coverage,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no sunrise/sunset event: {0}")]
    NoEvent(crate::astro::NoEvent),

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("insufficient data coverage: {0}")]
    Coverage(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("corrupt or incompatible file: {0}")]
    Format(String),

    #[error("weather fetch transport failure (retryable): {0}")]
    Transport(String),

    #[error("degenerate grid: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Shape(_)
            | Error::Format(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Input,
            Error::NoEvent(_) | Error::Coverage(_) | Error::MissingData(_) => ErrorKind::Coverage,
            Error::Numerical(_) | Error::Degenerate(_) => ErrorKind::Numerical,
            Error::Transport(_) | Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<crate::astro::NoEvent> for Error {
    fn from(e: crate::astro::NoEvent) -> Self {
        Error::NoEvent(e)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
