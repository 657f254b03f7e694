use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("label {label} outside {classes} categories")]
    Label { label: usize, classes: usize },
    #[error("category {0} has zero samples")]
    ZeroCount(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptyData(&'static str),
    #[error("epoch {0} missing from records")]
    MissingEpoch(usize),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
    #[error(transparent)]
    Core(#[from] cedg_core::CoreError),
    #[error(transparent)]
    Augment(#[from] cedg_augment::AugmentError),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl TrainError {
    /// True for failures caused by NaN or infinite numbers.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Self::NonFinite { .. } | Self::Core(cedg_core::CoreError::NonFinite { .. }))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.into(), msg: e.to_string() }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
