//! The five stochastic augmentations. Each draws from the caller's RNG so a
//! per-sample stream fully determines the result.

use rand::Rng;

use crate::error::{AugmentError, Result};
use crate::image::{Image, ImageF32, Pixel, CHANNELS};
use crate::preprocess::bilinear_resize;

pub const SIDE: usize = 32;

/// Top-left corner of a `crop`-sized window in a `SIDE`-sized image, each
/// coordinate uniform over `0..=SIDE - crop`.
pub fn crop_offsets<R: Rng>(rng: &mut R, crop: usize) -> (usize, usize) {
    let max = SIDE - crop;
    (rng.gen_range(0..=max), rng.gen_range(0..=max))
}

/// Crops a random `crop`×`crop` window and resizes it back to 32×32.
pub fn random_crop<P: Pixel, R: Rng>(img: &Image<P>, crop: usize, rng: &mut R) -> Result<Image<P>> {
    if img.width() != SIDE || img.height() != SIDE {
        return Err(AugmentError::Size(format!("random crop expects 32x32, got {}x{}", img.width(), img.height())));
    }
    if crop == 0 || crop > SIDE {
        return Err(AugmentError::Config(format!("crop size {crop} outside 1..=32")));
    }
    let (x0, y0) = crop_offsets(rng, crop);
    bilinear_resize(&img.crop(x0, y0, crop, crop)?, SIDE, SIDE)
}

pub fn flip_vertical<P: Pixel>(img: &Image<P>) -> Image<P> {
    let h = img.height();
    Image::from_fn(img.width(), h, |c, y, x| img.get(c, h - 1 - y, x))
}

pub fn flip_horizontal<P: Pixel>(img: &Image<P>) -> Image<P> {
    let w = img.width();
    Image::from_fn(w, img.height(), |c, y, x| img.get(c, y, w - 1 - x))
}

/// Vertical flip with probability 0.5, then independently a horizontal flip
/// with probability 0.5.
pub fn flip_vh<P: Pixel, R: Rng>(img: &Image<P>, rng: &mut R) -> Image<P> {
    let (v, h) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
    let mut out = if v { flip_vertical(img) } else { img.clone() };
    if h {
        out = flip_horizontal(&out);
    }
    out
}

/// Replaces every channel with `0.299 R + 0.587 G + 0.114 B`.
pub fn graying(img: &ImageF32) -> ImageF32 {
    let n = img.width() * img.height();
    let mut out = img.clone();
    let luma: Vec<f32> = (0..n)
        .map(|i| {
            let [r, g, b] = [0, 1, 2].map(|c| img.plane(c)[i] as f64);
            // Summed in f64 so a gray pixel maps exactly to itself.
            (0.299 * r + 0.587 * g + 0.114 * b) as f32
        })
        .collect();
    for c in 0..CHANNELS {
        out.plane_mut(c).copy_from_slice(&luma);
    }
    out
}

/// Row-major `k`×`k` weights: equal over cells whose centers lie within
/// `k / 2` of the kernel center, zero elsewhere.
pub fn disk_kernel(k: usize) -> Vec<f32> {
    let r = k as f32 / 2.0;
    let mid = (k / 2) as f32;
    let inside: Vec<bool> = (0..k * k)
        .map(|i| {
            let (dy, dx) = ((i / k) as f32 - mid, (i % k) as f32 - mid);
            (dy * dy + dx * dx).sqrt() <= r
        })
        .collect();
    let count = inside.iter().filter(|&&b| b).count() as f32;
    inside.into_iter().map(|b| if b { 1.0 / count } else { 0.0 }).collect()
}

/// Circular-average filter of size `k` with edge clamping.
pub fn smooth_with(img: &ImageF32, k: usize) -> ImageF32 {
    let kernel = disk_kernel(k);
    let half = (k / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    Image::from_fn(img.width(), img.height(), |c, y, x| {
        let mut acc = 0.0;
        for ky in 0..k {
            for kx in 0..k {
                let wt = kernel[ky * k + kx];
                if wt == 0.0 {
                    continue;
                }
                let sy = (y as isize + ky as isize - half).clamp(0, h - 1) as usize;
                let sx = (x as isize + kx as isize - half).clamp(0, w - 1) as usize;
                acc += wt * img.get(c, sy, sx);
            }
        }
        acc
    })
}

/// Smoothing with a kernel size drawn uniformly from `sizes`.
pub fn smooth<R: Rng>(img: &ImageF32, sizes: &[usize], rng: &mut R) -> Result<ImageF32> {
    if sizes.is_empty() || sizes.iter().any(|&k| k == 0 || k % 2 == 0) {
        return Err(AugmentError::Config(format!("smooth kernel sizes must be odd and non-empty, got {sizes:?}")));
    }
    let k = sizes[rng.gen_range(0..sizes.len())];
    Ok(smooth_with(img, k))
}

/// A full-height vertical band `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskLine {
    pub start: usize,
    pub width: usize,
}

/// Columns covered by a line of `width` centered at `center`, if in bounds.
pub fn line_span(center: usize, width: usize, image_width: usize) -> Option<MaskLine> {
    let start = center.checked_sub(width / 2)?;
    (start + width <= image_width).then_some(MaskLine { start, width })
}

pub const MASK_ATTEMPTS: usize = 1000;

/// Draws disjoint vertical lines whose widths sum to `total` (or fewer if
/// `MASK_ATTEMPTS` draws are exhausted). Each draw picks a width uniform in
/// `1..=remaining` and a center column uniform over the image; candidates
/// that overlap or leave the image are discarded.
pub fn draw_mask_lines<R: Rng>(image_width: usize, total: usize, rng: &mut R) -> Vec<MaskLine> {
    draw_mask_lines_counted(image_width, total, rng).0
}

/// [`draw_mask_lines`] plus the number of draws it used.
pub fn draw_mask_lines_counted<R: Rng>(image_width: usize, total: usize, rng: &mut R) -> (Vec<MaskLine>, usize) {
    let mut lines: Vec<MaskLine> = Vec::new();
    let mut remaining = total;
    let mut attempts = 0;
    while remaining > 0 && attempts < MASK_ATTEMPTS {
        attempts += 1;
        let width = rng.gen_range(1..=remaining);
        let center = rng.gen_range(0..image_width);
        let Some(line) = line_span(center, width, image_width) else { continue };
        let overlaps = lines
            .iter()
            .any(|l| line.start < l.start + l.width && l.start < line.start + line.width);
        if overlaps {
            continue;
        }
        remaining -= width;
        lines.push(line);
    }
    (lines, attempts)
}

/// Fills each line with the per-channel mean of the pixels it covers.
pub fn apply_mask_lines(img: &ImageF32, lines: &[MaskLine]) -> ImageF32 {
    let mut out = img.clone();
    let h = img.height();
    for line in lines {
        for c in 0..CHANNELS {
            let mut sum = 0.0f64;
            for y in 0..h {
                for x in line.start..line.start + line.width {
                    sum += img.get(c, y, x) as f64;
                }
            }
            let mean = (sum / (h * line.width) as f64) as f32;
            for y in 0..h {
                for x in line.start..line.start + line.width {
                    out.set(c, y, x, mean);
                }
            }
        }
    }
    out
}

pub fn masking<R: Rng>(img: &ImageF32, total: usize, rng: &mut R) -> Result<ImageF32> {
    if img.width() < total {
        return Err(AugmentError::Size(format!("masking width {total} exceeds image width {}", img.width())));
    }
    let lines = draw_mask_lines(img.width(), total, rng);
    Ok(apply_mask_lines(img, &lines))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_supports() {
        assert_eq!(disk_kernel(3).iter().filter(|&&v| v > 0.0).count(), 9);
        let k5 = disk_kernel(5);
        assert_eq!(k5.iter().filter(|&&v| v > 0.0).count(), 21);
        for corner in [0, 4, 20, 24] {
            assert_eq!(k5[corner], 0.0);
        }
    }

    #[test]
    fn widest_line_coverage() {
        assert_eq!(line_span(16, 10, 32), Some(MaskLine { start: 11, width: 10 }));
        assert_eq!(line_span(2, 10, 32), None);
        assert_eq!(line_span(28, 10, 32), None);
    }

    #[test]
    fn red_to_gray() {
        let img = ImageF32::filled(2, 2, [1.0, 0.0, 0.0]);
        assert!(graying(&img).data().iter().all(|&v| (v - 0.299).abs() < 1e-7));
    }
}
