use std::path::PathBuf;

use thiserror::Error;

use crate::despace::Candidate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error kinds surfaced by the library. The CLI maps each kind to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("unknown word `{0}`")]
    Lookup(String),

    #[error("objective failed on candidate {candidate:?}: {source}")]
    Objective {
        candidate: Candidate,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

/// Broad classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Config,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Data(_) | Error::Io { .. } | Error::Lookup(_) | Error::Argument(_) => {
                ErrorClass::Data
            }
            Error::Training(_) => ErrorClass::Data,
            Error::Objective { source, .. } | Error::Fold { source, .. } => source.class(),
            Error::Internal(_) => ErrorClass::Internal,
        }
    }
}
