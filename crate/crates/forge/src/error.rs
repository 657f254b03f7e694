use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("topic {0:?} has no target category")]
    UnmappedTopic(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("dataset {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Augment(#[from] cedg_augment::AugmentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ForgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Dataset { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;
