//! Image ingestion, normalization, cropping, patch sampling, and bicubic
//! resampling.
//!
//! All pixel values live on the real `[0, 255]` scale regardless of source
//! bit depth; network tensors are produced by [`normalize`] and mapped back
//! by [`denormalize`], which also applies the `[0, 255]` clamp.

mod bicubic;
mod crop;
mod dataset;
mod error;
mod io;
mod patches;
mod scale;

pub use bicubic::bicubic_resize;
pub use crop::maximal_info_crop;
pub use dataset::{Dataset, DatasetEntry, MANIFEST_NAME};
pub use error::ImageError;
pub use io::{load_image, save_image};
pub use patches::{sample_patches, PatchPair};
pub use scale::{sample_scale, training_scales, ScaleFactor};

use crate::nn::{Element, Tensor};

/// Source bit depth, kept as metadata after values are mapped to `[0, 255]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// 2D pixel grid, 1 or 3 channels, interleaved row-major, values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    bit_depth: BitDepth,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannelCount(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::DataLength {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            bit_depth: BitDepth::Eight,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            bit_depth: BitDepth::Eight,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
            bit_depth: BitDepth::Eight,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub(crate) fn set_bit_depth(&mut self, d: BitDepth) {
        self.bit_depth = d;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Value at `(x, y)` for channel `c`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Rectangular sub-image; the window must lie inside the image.
    pub fn window(&self, left: usize, top: usize, width: usize, height: usize) -> Image {
        assert!(left + width <= self.width && top + height <= self.height);
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in top..top + height {
            let row = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[row..row + width * self.channels]);
        }
        Image {
            width,
            height,
            channels: self.channels,
            data,
            bit_depth: self.bit_depth,
        }
    }
}

/// Dataset pixel statistics on the `[0, 1]` scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self, ImageError> {
        if !(std > 0.0) {
            return Err(ImageError::BadStd(std));
        }
        Ok(Self { mean, std })
    }

    /// Normalized-space bounds of the pixel range `[0, 255]`; network outputs
    /// are clamped to this interval before anything downstream sees them.
    pub fn normalized_pixel_range(&self) -> (f64, f64) {
        ((0.0 - self.mean) / self.std, (1.0 - self.mean) / self.std)
    }
}

impl Default for NormalizationSpec {
    /// Training-set statistics of the maximal-information crops.
    fn default() -> Self {
        Self {
            mean: 0.370,
            std: 0.117,
        }
    }
}

/// Reduce to one channel. Grayscale passes through; RGB uses the BT.601
/// weights (0.299, 0.587, 0.114).
pub fn to_luminance(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.width * img.height);
    for px in img.data.chunks_exact(3) {
        data.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
        bit_depth: img.bit_depth,
    }
}

/// `(pixel / 255 - mean) / std`, shaped `[C, H, W]`.
pub fn normalize<E: Element>(img: &Image, spec: &NormalizationSpec) -> Tensor<E> {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut data = vec![E::ZERO; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(x, y, ch) as f64 / 255.0;
                data[(ch * h + y) * w + x] = E::from_f64((v - spec.mean) / spec.std);
            }
        }
    }
    Tensor::new(&[c, h, w], data).expect("sized above")
}

/// Invert [`normalize`] and clamp to `[0, 255]`. Expects a `[C, H, W]` tensor.
pub fn denormalize<E: Element>(t: &Tensor<E>, spec: &NormalizationSpec) -> Result<Image, ImageError> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(ImageError::BadTensorShape(shape.to_vec()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c != 1 && c != 3 {
        return Err(ImageError::BadChannelCount(c));
    }
    let mut img = Image::zeros(w, h, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = t.data()[(ch * h + y) * w + x].to_f64();
                let px = (v * spec.std + spec.mean) * 255.0;
                img.set(x, y, ch, px.clamp(0.0, 255.0) as f32);
            }
        }
    }
    Ok(img)
}
