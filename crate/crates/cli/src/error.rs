use std::path::PathBuf;

use thiserror::Error;

use cedg_augment::AugmentError;
use cedg_core::CoreError;
use cedg_forge::ForgeError;
use cedg_train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl CliError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_DATA: i32 = 3;
    pub const EXIT_NUMERIC: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => Self::EXIT_CONFIG,
            Self::Data(_) | Self::Io { .. } => Self::EXIT_DATA,
            Self::Numeric(_) => Self::EXIT_NUMERIC,
        }
    }

    /// Short machine-readable kind for the structured error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data(_) | Self::Io { .. } => "data",
            Self::Numeric(_) => "numeric",
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.into(), msg: e.to_string() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } => Self::Numeric(e.to_string()),
            CoreError::Checkpoint(_) | CoreError::Io(_) => Self::Data(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Config(_) | AugmentError::ZeroStd { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::Config(_) => Self::Config(e.to_string()),
            ForgeError::Augment(a) => a.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return Self::Numeric(e.to_string());
        }
        match e {
            TrainError::Core(c) => c.into(),
            TrainError::Augment(a) => a.into(),
            TrainError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
