//! PSNR and SSIM on the luminance channel.
//!
//! PSNR returns `f64::INFINITY` for identical inputs; aggregation excludes
//! infinite values from the mean/std and counts them so callers can warn.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{to_luminance, Image};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric inputs must match in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("metrics expect single-channel images, got {0} channels")]
    MultiChannel(usize),
    #[error("ssim needs extents >= {window}, got {height}x{width}")]
    TooSmallForWindow {
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("evaluate_set got {0} SR images but {1} HR images")]
    LengthMismatch(usize, usize),
}

fn check_pair(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.channels() != 1 {
        return Err(MetricError::MultiChannel(a.channels()));
    }
    if b.channels() != 1 {
        return Err(MetricError::MultiChannel(b.channels()));
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::ShapeMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    Ok(())
}

/// `10 * log10(peak^2 / MSE)` in dB; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable Gaussian filter, valid region only: `[H,W] -> [H-10, W-10]`.
fn gauss_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * row[x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, valid-region aggregation (no padding).
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmallForWindow {
            window: SSIM_WINDOW,
            height: h,
            width: w,
        });
    }
    let win = gaussian_window();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let mu_x = gauss_valid(&x, h, w, &win);
    let mu_y = gauss_valid(&y, h, w, &win);
    let m_xx = gauss_valid(&xx, h, w, &win);
    let m_yy = gauss_valid(&yy, h, w, &win);
    let m_xy = gauss_valid(&xy, h, w, &win);

    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        sum += s;
    }
    Ok(sum / mu_x.len() as f64)
}

/// Per-image PSNR/SSIM scores.
#[derive(Clone, Copy, Debug)]
pub struct PairScores {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus mean and population standard deviation.
///
/// Infinite PSNR values (identical pairs) are excluded from the PSNR
/// aggregates; `infinite_psnr_count` records how many were dropped.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub per_image: Vec<PairScores>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub infinite_psnr_count: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Score matched SR/HR pairs on their luminance channel.
pub fn evaluate_set(sr_images: &[Image], hr_images: &[Image]) -> Result<MetricReport, MetricError> {
    if sr_images.len() != hr_images.len() {
        return Err(MetricError::LengthMismatch(
            sr_images.len(),
            hr_images.len(),
        ));
    }
    let per_image: Vec<PairScores> = sr_images
        .par_iter()
        .zip(hr_images.par_iter())
        .map(|(sr, hr)| {
            let sr_y = to_luminance(sr);
            let hr_y = to_luminance(hr);
            Ok(PairScores {
                psnr_db: psnr(&sr_y, &hr_y, 255.0)?,
                ssim: ssim(&sr_y, &hr_y, 255.0)?,
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let finite_psnr: Vec<f64> = per_image
        .iter()
        .map(|s| s.psnr_db)
        .filter(|v| v.is_finite())
        .collect();
    let ssims: Vec<f64> = per_image.iter().map(|s| s.ssim).collect();
    let (psnr_mean, psnr_std) = mean_std(&finite_psnr);
    let (ssim_mean, ssim_std) = mean_std(&ssims);
    Ok(MetricReport {
        infinite_psnr_count: per_image.len() - finite_psnr.len(),
        per_image,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
    })
}
