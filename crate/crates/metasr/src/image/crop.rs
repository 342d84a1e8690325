use super::{Image, ImageError};

/// Crop window maximizing the sum of pixel intensities ("most pixel
/// information"), ties broken by the smallest `(row, col)` offset.
///
/// For multi-channel images the intensity of a pixel is the sum over its
/// channels. Returns the crop and its `(row, col)` offset.
pub fn maximal_info_crop(
    img: &Image,
    crop_h: usize,
    crop_w: usize,
) -> Result<(Image, (usize, usize)), ImageError> {
    let (h, w) = (img.height(), img.width());
    if crop_h > h || crop_w > w || crop_h == 0 || crop_w == 0 {
        return Err(ImageError::CropTooLarge {
            crop_h,
            crop_w,
            height: h,
            width: w,
        });
    }

    // Integral image over per-pixel intensity; f64 keeps u8/u16-derived sums
    // exact (they are dyadic rationals well under 2^53).
    let c = img.channels();
    let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row_sum = 0.0f64;
        for x in 0..w {
            let mut px = 0.0f64;
            for ch in 0..c {
                px += img.get(x, y, ch) as f64;
            }
            row_sum += px;
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] + row_sum;
        }
    }
    let window_sum = |top: usize, left: usize| -> f64 {
        let (b, r) = (top + crop_h, left + crop_w);
        integral[b * (w + 1) + r] - integral[top * (w + 1) + r] - integral[b * (w + 1) + left]
            + integral[top * (w + 1) + left]
    };

    let mut best = (0usize, 0usize);
    let mut best_sum = window_sum(0, 0);
    for top in 0..=h - crop_h {
        for left in 0..=w - crop_w {
            let s = window_sum(top, left);
            if s > best_sum {
                best_sum = s;
                best = (top, left);
            }
        }
    }
    Ok((img.window(best.1, best.0, crop_w, crop_h), best))
}
