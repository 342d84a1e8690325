//! PSNR/SSIM against direct-formula oracles and the report invariants.

use metasr::image::Image;
use metasr::metrics::{evaluate_set, psnr, ssim, MetricError, SSIM_WINDOW};
use metasr_testutil::{rand_image, rel_err};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---- PSNR ----

#[test]
fn psnr_identical_images_are_infinite() {
    let img = rand_image(1, 16, 16, 0.0, 255.0);
    assert_eq!(psnr(&img, &img, 255.0).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_black_vs_white_is_zero_db() {
    let black = Image::zeros(8, 8, 1);
    let white = Image::from_fn(8, 8, |_, _| 255.0);
    assert_eq!(psnr(&black, &white, 255.0).unwrap(), 0.0);
}

#[test]
fn psnr_matches_direct_formula() {
    for case in 0..120 {
        let a = rand_image(100 + case, 12, 9, 0.0, 255.0);
        let b = rand_image(200 + case, 12, 9, 0.0, 255.0);
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / (12.0 * 9.0);
        let expect = 10.0 * (255.0f64 * 255.0 / mse).log10();
        let got = psnr(&a, &b, 255.0).unwrap();
        assert!(rel_err(got, expect) < 1e-9);
    }
}

#[test]
fn psnr_rejects_shape_mismatch() {
    let a = Image::zeros(4, 4, 1);
    let b = Image::zeros(5, 4, 1);
    assert!(matches!(
        psnr(&a, &b, 255.0),
        Err(MetricError::ShapeMismatch(..))
    ));
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let base = rand_image(300, 32, 32, 40.0, 200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noisy = |amp: f32, rng: &mut ChaCha8Rng| {
        let mut img = base.clone();
        for v in img.data_mut() {
            *v = (*v + rng.gen_range(-amp..amp)).clamp(0.0, 255.0);
        }
        img
    };
    let p1 = psnr(&base, &noisy(5.0, &mut rng), 255.0).unwrap();
    let p2 = psnr(&base, &noisy(20.0, &mut rng), 255.0).unwrap();
    let p3 = psnr(&base, &noisy(60.0, &mut rng), 255.0).unwrap();
    assert!(p1 > p2 && p2 > p3, "{p1} > {p2} > {p3} expected");
}

// ---- SSIM ----

/// Independent SSIM: direct per-window Gaussian-weighted statistics, no
/// separable filtering, no shared code with the implementation.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let n = SSIM_WINDOW;
    let sigma = 1.5f64;
    let mut kernel = vec![0.0f64; n * n];
    let half = (n / 2) as f64;
    let mut ksum = 0.0;
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - half, x as f64 - half);
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            kernel[y * n + x] = v;
            ksum += v;
        }
    }
    for v in &mut kernel {
        *v /= ksum;
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - n {
        for left in 0..=w - n {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            for y in 0..n {
                for x in 0..n {
                    let k = kernel[y * n + x];
                    mx += k * a.get(left + x, top + y, 0) as f64;
                    my += k * b.get(left + x, top + y, 0) as f64;
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            for y in 0..n {
                for x in 0..n {
                    let k = kernel[y * n + x];
                    let da = a.get(left + x, top + y, 0) as f64 - mx;
                    let db = b.get(left + x, top + y, 0) as f64 - my;
                    vx += k * da * da;
                    vy += k * db * db;
                    cov += k * da * db;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_of_identical_images_is_one() {
    let img = rand_image(4, 16, 16, 0.0, 255.0);
    assert!((ssim(&img, &img, 255.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_of_constant_images_is_the_luminance_term() {
    // Variance terms cancel; SSIM = (2uv + C1) / (u^2 + v^2 + C1).
    let u = 80.0f64;
    let v = 140.0f64;
    let a = Image::from_fn(16, 16, |_, _| u as f32);
    let b = Image::from_fn(16, 16, |_, _| v as f32);
    let c1 = (0.01f64 * 255.0).powi(2);
    let expect = (2.0 * u * v + c1) / (u * u + v * v + c1);
    let got = ssim(&a, &b, 255.0).unwrap();
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    let mut worst = 0.0f64;
    for case in 0..100 {
        let a = rand_image(400 + case, 16, 16, 0.0, 255.0);
        let b = rand_image(500 + case, 16, 16, 0.0, 255.0);
        let got = ssim(&a, &b, 255.0).unwrap();
        let want = ssim_oracle(&a, &b);
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-7, "worst abs diff {worst}");
}

#[test]
fn ssim_rejects_images_smaller_than_the_window() {
    let a = Image::zeros(10, 12, 1);
    assert!(matches!(
        ssim(&a, &a, 255.0),
        Err(MetricError::TooSmallForWindow { .. })
    ));
}

#[test]
fn metrics_are_symmetric_and_flip_invariant() {
    let a = rand_image(6, 14, 14, 0.0, 255.0);
    let b = rand_image(7, 14, 14, 0.0, 255.0);
    assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
    let s_ab = ssim(&a, &b, 255.0).unwrap();
    let s_ba = ssim(&b, &a, 255.0).unwrap();
    assert!((s_ab - s_ba).abs() < 1e-12);

    let flip = |img: &Image| {
        Image::from_fn(img.width(), img.height(), |x, y| {
            img.get(img.width() - 1 - x, img.height() - 1 - y, 0)
        })
    };
    let p = psnr(&a, &b, 255.0).unwrap();
    let pf = psnr(&flip(&a), &flip(&b), 255.0).unwrap();
    assert!((p - pf).abs() < 1e-9);
    let sf = ssim(&flip(&a), &flip(&b), 255.0).unwrap();
    assert!((s_ab - sf).abs() < 1e-9);
}

#[test]
fn ssim_is_bounded_by_one_with_equality_only_for_identical() {
    for case in 0..50 {
        let a = rand_image(600 + case, 12, 12, 0.0, 255.0);
        let b = rand_image(700 + case, 12, 12, 0.0, 255.0);
        let s = ssim(&a, &b, 255.0).unwrap();
        assert!(s < 1.0, "distinct random images must score below 1, got {s}");
        assert!(s >= -1.0);
    }
}

// ---- aggregation ----

#[test]
fn single_pair_report_has_zero_std() {
    let a = rand_image(8, 16, 16, 0.0, 255.0);
    let b = rand_image(9, 16, 16, 0.0, 255.0);
    let report = evaluate_set(&[a.clone()], &[b]).unwrap();
    assert_eq!(report.per_image.len(), 1);
    assert_eq!(report.psnr_std, 0.0);
    assert_eq!(report.ssim_std, 0.0);
    assert_eq!(report.psnr_mean, report.per_image[0].psnr_db);
}

#[test]
fn psnr_ten_and_twenty_aggregate_to_mean_15_std_5() {
    // Constant-difference pairs hitting exactly 10 dB and 20 dB.
    let make_pair = |db: f64, seed: u64| {
        let d = 255.0 / 10f64.powf(db / 20.0);
        let a = rand_image(seed, 16, 16, 100.0, 120.0);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v += d as f32;
        }
        (a, b)
    };
    let (a1, b1) = make_pair(10.0, 10);
    let (a2, b2) = make_pair(20.0, 11);
    let report = evaluate_set(&[a1, a2], &[b1, b2]).unwrap();
    assert!((report.per_image[0].psnr_db - 10.0).abs() < 1e-6);
    assert!((report.per_image[1].psnr_db - 20.0).abs() < 1e-6);
    assert!((report.psnr_mean - 15.0).abs() < 1e-6);
    assert!((report.psnr_std - 5.0).abs() < 1e-6);
}

#[test]
fn aggregates_recompute_from_per_image_values() {
    let srs: Vec<Image> = (0..6).map(|i| rand_image(900 + i, 16, 16, 0.0, 255.0)).collect();
    let hrs: Vec<Image> = (0..6).map(|i| rand_image(950 + i, 16, 16, 0.0, 255.0)).collect();
    let report = evaluate_set(&srs, &hrs).unwrap();
    let psnrs: Vec<f64> = report.per_image.iter().map(|p| p.psnr_db).collect();
    let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    let std =
        (psnrs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / psnrs.len() as f64).sqrt();
    assert!((report.psnr_mean - mean).abs() < 1e-9);
    assert!((report.psnr_std - std).abs() < 1e-9);
    assert_eq!(report.infinite_psnr_count, 0);
}

#[test]
fn infinite_psnr_is_excluded_and_counted() {
    let a = rand_image(12, 16, 16, 0.0, 255.0);
    let b = rand_image(13, 16, 16, 0.0, 255.0);
    let report = evaluate_set(&[a.clone(), a.clone()], &[a, b]).unwrap();
    assert_eq!(report.infinite_psnr_count, 1);
    assert!(report.psnr_mean.is_finite());
    assert!(report.per_image[0].psnr_db.is_infinite());
}

#[test]
fn evaluate_set_rejects_length_mismatch() {
    let a = rand_image(14, 16, 16, 0.0, 255.0);
    assert!(matches!(
        evaluate_set(&[a.clone(), a.clone()], &[a]),
        Err(MetricError::LengthMismatch(2, 1))
    ));
}

#[test]
fn evaluation_is_bit_reproducible() {
    let srs: Vec<Image> = (0..4).map(|i| rand_image(20 + i, 20, 20, 0.0, 255.0)).collect();
    let hrs: Vec<Image> = (0..4).map(|i| rand_image(30 + i, 20, 20, 0.0, 255.0)).collect();
    let r1 = evaluate_set(&srs, &hrs).unwrap();
    let r2 = evaluate_set(&srs, &hrs).unwrap();
    assert_eq!(r1.psnr_mean.to_bits(), r2.psnr_mean.to_bits());
    assert_eq!(r1.ssim_mean.to_bits(), r2.ssim_mean.to_bits());
    for (x, y) in r1.per_image.iter().zip(&r2.per_image) {
        assert_eq!(x.psnr_db.to_bits(), y.psnr_db.to_bits());
        assert_eq!(x.ssim.to_bits(), y.ssim.to_bits());
    }
}
