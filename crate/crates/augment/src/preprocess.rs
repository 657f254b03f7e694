//! Deterministic preprocessing applied to every image: equalization, color
//! normalization and resizing.

use serde::{Deserialize, Serialize};

use crate::error::{AugmentError, Result};
use crate::image::{Image, ImageF32, ImageU8, Pixel, CHANNELS};

/// Per-channel 256-bin histogram equalization. A constant channel is left
/// unchanged.
pub fn hist_equalize(img: &ImageU8) -> ImageU8 {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        let n = plane.len() as u64;
        let mut hist = [0u64; 256];
        for &v in plane {
            hist[v as usize] += 1;
        }
        let mut cdf = [0u64; 256];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        let cdf_min = hist.iter().copied().find(|&h| h > 0).unwrap_or(n);
        if cdf_min == n {
            continue;
        }
        let denom = (n - cdf_min) as f64;
        let lut: Vec<u8> = cdf
            .iter()
            .map(|&v| ((v.saturating_sub(cdf_min)) as f64 / denom * 255.0).round() as u8)
            .collect();
        for v in out.plane_mut(c) {
            *v = lut[*v as usize];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: [f32; 3],
    pub stds: [f32; 3],
}

impl Default for Normalization {
    /// Channel statistics of the combined source and target sets.
    fn default() -> Self {
        Self { means: [136.2, 134.7, 118.9], stds: [73.9, 71.3, 76.1] }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        for (channel, &std) in self.stds.iter().enumerate() {
            if !(std > 0.0) {
                return Err(AugmentError::ZeroStd { channel, std });
            }
        }
        Ok(())
    }
}

/// `(v - mean) / std` per channel.
pub fn color_normalize(img: &ImageU8, norm: &Normalization) -> Result<ImageF32> {
    norm.validate()?;
    let mut out = img.to_f32();
    for c in 0..CHANNELS {
        let (m, s) = (norm.means[c], norm.stds[c]);
        for v in out.plane_mut(c) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

/// Inverse of [`color_normalize`], rounded back to bytes.
pub fn denormalize(img: &ImageF32, norm: &Normalization) -> ImageU8 {
    let mut out = img.map(|v| v);
    for c in 0..CHANNELS {
        let (m, s) = (norm.means[c], norm.stds[c]);
        for v in out.plane_mut(c) {
            *v = *v * s + m;
        }
    }
    out.map(u8::from_f32)
}

/// Bilinear resampling with half-pixel centers; samples outside the source
/// clamp to the nearest edge.
pub fn bilinear_resize<P: Pixel>(img: &Image<P>, out_w: usize, out_h: usize) -> Result<Image<P>> {
    if out_w == 0 || out_h == 0 {
        return Err(AugmentError::Size(format!("resize target {out_w}x{out_h}")));
    }
    let (w, h) = (img.width(), img.height());
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|i| {
                let src = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f32);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f32)
            })
            .collect()
    };
    let xs = taps(out_w, w);
    let ys = taps(out_h, h);
    Ok(Image::from_fn(out_w, out_h, |c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = img.get(c, y0, x0).to_f32() * (1.0 - fx) + img.get(c, y0, x1).to_f32() * fx;
        let bottom = img.get(c, y1, x0).to_f32() * (1.0 - fx) + img.get(c, y1, x1).to_f32() * fx;
        P::from_f32(top * (1.0 - fy) + bottom * fy)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_channel_spreads_to_full_range() {
        let img = ImageU8::from_fn(2, 1, |_, _, x| if x == 0 { 10 } else { 200 });
        assert_eq!(hist_equalize(&img).plane(0), &[0, 255]);
    }

    #[test]
    fn constant_channel_untouched() {
        let img = ImageU8::filled(4, 4, [7, 100, 255]);
        assert_eq!(hist_equalize(&img), img);
    }

    #[test]
    fn normalization_reference_points() {
        let img = ImageU8::filled(1, 1, [136, 0, 0]);
        let norm = Normalization { means: [136.0, 0.0, 0.0], ..Default::default() };
        assert_eq!(color_normalize(&img, &norm).unwrap().get(0, 0, 0), 0.0);
        let r = (210.1f32 - 136.2) / 73.9;
        assert!((r - 1.0).abs() < 1e-6);
        let bad = Normalization { stds: [1.0, 0.0, 1.0], ..Default::default() };
        assert!(matches!(color_normalize(&img, &bad), Err(AugmentError::ZeroStd { channel: 1, .. })));
    }

    #[test]
    fn bilinear_upsample_two_by_two() {
        let img = ImageF32::from_fn(2, 2, |_, _, x| if x == 0 { 0.0 } else { 100.0 });
        let out = bilinear_resize(&img, 4, 4).unwrap();
        for y in 0..4 {
            let row: Vec<f32> = (0..4).map(|x| out.get(0, y, x)).collect();
            assert_eq!(row, [0.0, 25.0, 75.0, 100.0]);
        }
    }
}
