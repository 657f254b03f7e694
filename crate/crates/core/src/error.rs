use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("learning-rate schedule has no entry for epoch {0}")]
    NoLrForEpoch(usize),

    #[error("invalid optimizer config: {0}")]
    Optimizer(String),

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("feature `{0}` is not available in this bundle")]
    MissingStage(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> CoreError {
    CoreError::Shape { op, detail: detail.into() }
}
