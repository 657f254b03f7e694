//! Image preprocessing and the stochastic augmentations used to bridge the
//! gap between the weakly labeled source images and the target images.
//!
//! Images are channel-planar. After [`preprocess`] they live in normalized
//! float space, where all augmentations operate.

pub mod augs;
pub mod error;
pub mod image;
pub mod pipeline;
pub mod preprocess;

pub use error::{AugmentError, Result};
pub use image::{Image, ImageF32, ImageU8, Pixel};
pub use pipeline::{apply_pipeline, augment_batch, preprocess, preprocess_batch, AugmentConfig, Augmentation};
pub use preprocess::{bilinear_resize, color_normalize, denormalize, hist_equalize, Normalization};
