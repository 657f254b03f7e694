use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cedg_core::rng::stream;
use cedg_core::Tensor32;

use crate::augs::{flip_vh, graying, masking, random_crop, smooth, SIDE};
use crate::error::{AugmentError, Result};
use crate::image::{ImageF32, ImageU8, CHANNELS};
use crate::preprocess::{bilinear_resize, color_normalize, hist_equalize, Normalization};

/// The stochastic augmentations, in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    RandomCrop,
    VerticalHorizontalFlip,
    Graying,
    Smooth,
    Masking,
}

impl Augmentation {
    pub const ORDER: [Augmentation; 5] =
        [Self::RandomCrop, Self::VerticalHorizontalFlip, Self::Graying, Self::Smooth, Self::Masking];

    pub fn short_name(self) -> &'static str {
        match self {
            Self::RandomCrop => "RC",
            Self::VerticalHorizontalFlip => "VHF",
            Self::Graying => "GI",
            Self::Smooth => "SH",
            Self::Masking => "MG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Enabled augmentations; applied in [`Augmentation::ORDER`] regardless
    /// of the order listed here.
    pub enabled: Vec<Augmentation>,
    pub skip_probability: f64,
    pub crop_size: usize,
    pub mask_total_width: usize,
    pub smooth_kernels: Vec<usize>,
    pub normalization: Normalization,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: Augmentation::ORDER.to_vec(),
            skip_probability: 0.5,
            crop_size: 24,
            mask_total_width: 10,
            smooth_kernels: vec![3, 5],
            normalization: Normalization::default(),
        }
    }
}

impl AugmentConfig {
    /// Equalization and normalization only.
    pub fn none() -> Self {
        Self { enabled: Vec::new(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.skip_probability) {
            return Err(AugmentError::Config(format!("skip probability {} outside [0,1]", self.skip_probability)));
        }
        if self.crop_size == 0 || self.crop_size > SIDE {
            return Err(AugmentError::Config(format!("crop size {} outside 1..=32", self.crop_size)));
        }
        if self.mask_total_width > SIDE {
            return Err(AugmentError::Config(format!("mask width {} exceeds 32", self.mask_total_width)));
        }
        if self.smooth_kernels.is_empty() || self.smooth_kernels.iter().any(|&k| k % 2 == 0) {
            return Err(AugmentError::Config(format!("smooth kernels {:?} must be odd", self.smooth_kernels)));
        }
        self.normalization.validate()
    }

    pub fn is_enabled(&self, a: Augmentation) -> bool {
        self.enabled.contains(&a)
    }
}

/// Deterministic part: resize to 32×32 if needed, equalize, normalize.
pub fn preprocess(img: &ImageU8, norm: &Normalization) -> Result<ImageF32> {
    let img = if (img.width(), img.height()) != (SIDE, SIDE) {
        bilinear_resize(img, SIDE, SIDE)?
    } else {
        img.clone()
    };
    color_normalize(&hist_equalize(&img), norm)
}

fn apply_one<R: Rng>(a: Augmentation, img: &ImageF32, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageF32> {
    match a {
        Augmentation::RandomCrop => random_crop(img, cfg.crop_size, rng),
        Augmentation::VerticalHorizontalFlip => Ok(flip_vh(img, rng)),
        Augmentation::Graying => Ok(graying(img)),
        Augmentation::Smooth => smooth(img, &cfg.smooth_kernels, rng),
        Augmentation::Masking => masking(img, cfg.mask_total_width, rng),
    }
}

/// Every intermediate image of one pipeline run, labelled by stage.
pub fn apply_pipeline_traced<R: Rng>(
    img: &ImageU8,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<(String, ImageF32)>> {
    let mut stages = Vec::new();
    let resized = if (img.width(), img.height()) != (SIDE, SIDE) {
        bilinear_resize(img, SIDE, SIDE)?
    } else {
        img.clone()
    };
    let eq = hist_equalize(&resized);
    let mut cur = color_normalize(&eq, &cfg.normalization)?;
    stages.push(("equalized".to_string(), cur.clone()));
    for a in Augmentation::ORDER {
        if !cfg.is_enabled(a) {
            continue;
        }
        if rng.gen_bool(cfg.skip_probability) {
            continue;
        }
        cur = apply_one(a, &cur, cfg, rng)?;
        stages.push((a.short_name().to_string(), cur.clone()));
    }
    Ok(stages)
}

/// Equalize, normalize, then each enabled augmentation in fixed order,
/// each skipped independently with `cfg.skip_probability`.
pub fn apply_pipeline<R: Rng>(img: &ImageU8, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageF32> {
    let mut cur = preprocess(img, &cfg.normalization)?;
    for a in Augmentation::ORDER {
        if !cfg.is_enabled(a) || rng.gen_bool(cfg.skip_probability) {
            continue;
        }
        cur = apply_one(a, &cur, cfg, rng)?;
    }
    Ok(cur)
}

pub const AUGMENT_STREAM: &str = "augment";

/// Runs the pipeline on `images[i]` with the stream keyed by
/// `(seed, epoch, keys[i])`, in parallel on the current rayon pool, and
/// stacks the results into `[N, 3, 32, 32]`. The result does not depend on
/// the number of worker threads.
pub fn augment_batch(
    images: &[&ImageU8],
    keys: &[u64],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: u64,
) -> Result<Tensor32> {
    assert_eq!(images.len(), keys.len(), "one stream key per image");
    let outs: Vec<ImageF32> = images
        .par_iter()
        .zip(keys.par_iter())
        .map(|(img, &k)| apply_pipeline(img, cfg, &mut stream(seed, AUGMENT_STREAM, epoch, k)))
        .collect::<Result<_>>()?;
    Ok(stack(&outs))
}

/// Deterministic preprocessing only, stacked into `[N, 3, 32, 32]`.
pub fn preprocess_batch(images: &[&ImageU8], norm: &Normalization) -> Result<Tensor32> {
    let outs: Vec<ImageF32> = images.par_iter().map(|img| preprocess(img, norm)).collect::<Result<_>>()?;
    Ok(stack(&outs))
}

pub fn stack(images: &[ImageF32]) -> Tensor32 {
    let mut data = Vec::with_capacity(images.len() * CHANNELS * SIDE * SIDE);
    for img in images {
        data.extend_from_slice(img.data());
    }
    Tensor32::new(vec![images.len(), CHANNELS, SIDE, SIDE], data).expect("32x32 images")
}
