//! Bicubic resampling with the Catmull-Rom kernel.
//!
//! Used both as the degradation operator that manufactures LR inputs and as
//! the interpolation baseline the model is compared against.

use super::Image;

/// Keys cubic kernel with `a = -0.5` (Catmull-Rom).
pub(crate) fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Resize to `out_w x out_h` with half-pixel-center coordinate mapping and
/// edge-clamped sampling. Source extents map to output extents, so equal
/// extents reproduce the input and constants stay constant at any size.
pub fn bicubic_resize(img: &Image, out_w: usize, out_h: usize) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    assert!(out_w >= 1 && out_h >= 1, "output extents must be positive");
    let scale_x = w as f64 / out_w as f64;
    let scale_y = h as f64 / out_h as f64;
    let mut out = Image::zeros(out_w, out_h, c);
    if c == 1 {
        // Dedicated single-channel path; this is the hot case.
        let src = img.data();
        let dst = out.data_mut();
        for oy in 0..out_h {
            let sy = (oy as f64 + 0.5) * scale_y - 0.5;
            let y0 = sy.floor() as isize;
            let fy = sy - y0 as f64;
            let wy = [
                cubic_kernel(fy + 1.0),
                cubic_kernel(fy),
                cubic_kernel(fy - 1.0),
                cubic_kernel(fy - 2.0),
            ];
            let rows: [usize; 4] = std::array::from_fn(|j| {
                (y0 - 1 + j as isize).clamp(0, h as isize - 1) as usize
            });
            for ox in 0..out_w {
                let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                let x0 = sx.floor() as isize;
                let fx = sx - x0 as f64;
                let wx = [
                    cubic_kernel(fx + 1.0),
                    cubic_kernel(fx),
                    cubic_kernel(fx - 1.0),
                    cubic_kernel(fx - 2.0),
                ];
                let cols: [usize; 4] = std::array::from_fn(|i| {
                    (x0 - 1 + i as isize).clamp(0, w as isize - 1) as usize
                });
                let mut acc = 0.0f64;
                for j in 0..4 {
                    let row = &src[rows[j] * w..(rows[j] + 1) * w];
                    let mut rsum = 0.0f64;
                    for i in 0..4 {
                        rsum += wx[i] * row[cols[i]] as f64;
                    }
                    acc += wy[j] * rsum;
                }
                dst[oy * out_w + ox] = acc as f32;
            }
        }
    } else {
        for oy in 0..out_h {
            let sy = (oy as f64 + 0.5) * scale_y - 0.5;
            let y0 = sy.floor() as isize;
            let fy = sy - y0 as f64;
            let wy = [
                cubic_kernel(fy + 1.0),
                cubic_kernel(fy),
                cubic_kernel(fy - 1.0),
                cubic_kernel(fy - 2.0),
            ];
            for ox in 0..out_w {
                let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                let x0 = sx.floor() as isize;
                let fx = sx - x0 as f64;
                let wx = [
                    cubic_kernel(fx + 1.0),
                    cubic_kernel(fx),
                    cubic_kernel(fx - 1.0),
                    cubic_kernel(fx - 2.0),
                ];
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for j in 0..4 {
                        let yy = (y0 - 1 + j as isize).clamp(0, h as isize - 1) as usize;
                        let mut rsum = 0.0f64;
                        for i in 0..4 {
                            let xx = (x0 - 1 + i as isize).clamp(0, w as isize - 1) as usize;
                            rsum += wx[i] * img.get(xx, yy, ch) as f64;
                        }
                        acc += wy[j] * rsum;
                    }
                    out.set(ox, oy, ch, acc as f32);
                }
            }
        }
    }
    out
}
