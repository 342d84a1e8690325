use rand::Rng;

use super::{bicubic_resize, Image, ImageError, ScaleFactor};

/// One training triple: an LR patch, the HR patch it was degraded from, and
/// the scale between them. HR extents are exactly `floor(p_lr * r)`.
#[derive(Clone, Debug)]
pub struct PatchPair {
    pub lr: Image,
    pub hr: Image,
    pub scale: ScaleFactor,
}

/// Sample `count` HR patches uniformly at random from `crop` and degrade
/// each to its LR counterpart by bicubic downsampling.
///
/// The HR patch is square with extent `floor(p_lr * r)`; the LR patch is
/// `p_lr x p_lr`. Deterministic for a given `rng` state.
pub fn sample_patches(
    crop: &Image,
    r: ScaleFactor,
    count: usize,
    p_lr: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PatchPair>, ImageError> {
    let hr_size = r.scaled_extent(p_lr);
    if hr_size > crop.height() || hr_size > crop.width() || hr_size == 0 {
        return Err(ImageError::CropTooSmall {
            need: hr_size,
            avail_h: crop.height(),
            avail_w: crop.width(),
            p_lr,
            scale: r.get(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let top = rng.gen_range(0..=crop.height() - hr_size);
        let left = rng.gen_range(0..=crop.width() - hr_size);
        let hr = crop.window(left, top, hr_size, hr_size);
        let lr = if hr_size == p_lr {
            hr.clone()
        } else {
            bicubic_resize(&hr, p_lr, p_lr)
        };
        out.push(PatchPair { lr, hr, scale: r });
    }
    Ok(out)
}
