use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("image size: {0}")]
    Size(String),
    #[error("channel {channel} has non-positive std {std}")]
    ZeroStd { channel: usize, std: f32 },
    #[error("invalid augment config: {0}")]
    Config(String),
    #[error("image io: {0}")]
    Image(String),
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;
