use std::path::Path;

use crate::error::{AugmentError, Result};

/// Pixel storage types an [`Image`] can hold.
pub trait Pixel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Pixel for u8 {
    fn to_f32(self) -> f32 {
        self as f32
    }

    /// Rounds half away from zero and saturates to `0..=255`.
    fn from_f32(v: f32) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

impl Pixel for f32 {
    fn to_f32(self) -> f32 {
        self
    }

    fn from_f32(v: f32) -> Self {
        v
    }
}

/// Three-channel image, channel-planar, each plane row-major.
#[derive(Clone, PartialEq)]
pub struct Image<P> {
    width: usize,
    height: usize,
    data: Vec<P>,
}

pub type ImageU8 = Image<u8>;
pub type ImageF32 = Image<f32>;

pub const CHANNELS: usize = 3;

impl<P: Pixel> Image<P> {
    pub fn new(width: usize, height: usize, data: Vec<P>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(AugmentError::Size(format!("image must be non-empty, got {width}x{height}")));
        }
        if data.len() != CHANNELS * width * height {
            return Err(AugmentError::Size(format!(
                "{width}x{height} needs {} values, got {}",
                CHANNELS * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [P; 3]) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * width * height);
        for v in rgb {
            data.extend(std::iter::repeat(v).take(width * height));
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> P) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * width * height);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<P> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[P] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [P] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> P {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: P) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map<Q: Pixel>(&self, f: impl Fn(P) -> Q) -> Image<Q> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f32(&self) -> ImageF32 {
        self.map(P::to_f32)
    }

    /// Sub-image with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(AugmentError::Size(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }
}

impl ImageU8 {
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(w as usize, h as usize, |c, y, x| img.get_pixel(x as u32, y as u32)[c])
    }

    pub fn to_rgb(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Rgb([0, 1, 2].map(|c| self.get(c, y as usize, x as usize)))
        })
    }

    /// Reads any format the `image` crate was built with (PPM and PNG).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| AugmentError::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb(&img.to_rgb8()))
    }

    /// Writes binary PPM (P6) for `.ppm`/`.pnm` paths, otherwise the format
    /// implied by the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;

        let path = path.as_ref();
        let err = |e: image::ImageError| AugmentError::Image(format!("{}: {e}", path.display()));
        let rgb = self.to_rgb();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "pnm")) {
            let file = std::fs::File::create(path).map_err(|e| AugmentError::Image(format!("{}: {e}", path.display())))?;
            PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(rgb.as_raw(), rgb.width(), rgb.height(), image::ExtendedColorType::Rgb8)
                .map_err(err)
        } else {
            rgb.save(path).map_err(err)
        }
    }
}

impl<P: Pixel> std::fmt::Debug for Image<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}
