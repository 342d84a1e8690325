//! Reading and writing image containers (PNG and the PNM family).
//!
//! 8-bit values map to `[0, 255]` directly; 16-bit grayscale is rescaled by
//! `255 / 65535`.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use super::{BitDepth, Image, ImageError};

/// Load an 8/16-bit grayscale or 8-bit RGB image.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| ImageError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| ImageError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    if reader.format().is_none() {
        return Err(ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "unrecognized container".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        other => ImageError::Decode {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;

    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, depth, data): (usize, BitDepth, Vec<f32>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (
            1,
            BitDepth::Eight,
            buf.into_raw().into_iter().map(|v| v as f32).collect(),
        ),
        DynamicImage::ImageLuma16(buf) => (
            1,
            BitDepth::Sixteen,
            buf.into_raw()
                .into_iter()
                .map(|v| v as f32 * (255.0 / 65535.0))
                .collect(),
        ),
        DynamicImage::ImageRgb8(buf) => (
            3,
            BitDepth::Eight,
            buf.into_raw().into_iter().map(|v| v as f32).collect(),
        ),
        other => {
            // Anything else (RGBA, 16-bit color, ...) is flattened to RGB8.
            let buf = other.to_rgb8();
            (
                3,
                BitDepth::Eight,
                buf.into_raw().into_iter().map(|v| v as f32).collect(),
            )
        }
    };
    let mut img = Image::new(w, h, channels, data)?;
    img.set_bit_depth(depth);
    Ok(img)
}

/// Write as 8-bit PNG/PNM depending on the extension; values are rounded to
/// the nearest integer and clamped.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let quantize = |v: f32| -> u8 { v.round().clamp(0.0, 255.0) as u8 };
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let dynimg = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .expect("sized buffer"),
        ),
        _ => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .expect("sized buffer"),
        ),
    };
    let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Png);
    dynimg
        .save_with_format(path, format)
        .map_err(|e| ImageError::Encode {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}
