//! Pipeline oracles: container round trips, luminance weights, the
//! normalization pair, crop argmax, patch geometry, bicubic kernels, and
//! scale sampling.

use metasr::image::{
    bicubic_resize, denormalize, load_image, maximal_info_crop, normalize, sample_patches,
    sample_scale, save_image, to_luminance, training_scales, Dataset, Image, ImageError,
    NormalizationSpec, ScaleFactor,
};
use metasr::nn::Tensor;
use metasr_testutil::rand_image;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scale(r: f64) -> ScaleFactor {
    ScaleFactor::new(r).unwrap()
}

// ---- I/O ----

#[test]
fn png_round_trip_is_exact_for_8bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = Image::from_fn(13, 7, |_, _| rng.gen_range(0..=255u8) as f32);
    let path = dir.path().join("t.png");
    save_image(&img, &path).unwrap();
    let loaded = load_image(&path).unwrap();
    assert_eq!(loaded.width(), 13);
    assert_eq!(loaded.height(), 7);
    assert_eq!(loaded.data(), img.data());
}

#[test]
fn sixteen_bit_white_maps_to_255() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t16.png");
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_fn(4, 4, |x, y| {
            image::Luma([if (x + y) % 2 == 0 { 65535u16 } else { 0 }])
        });
    buf.save(&path).unwrap();
    let loaded = load_image(&path).unwrap();
    assert_eq!(loaded.bit_depth(), metasr::image::BitDepth::Sixteen);
    assert_eq!(loaded.get(0, 0, 0), 255.0);
    assert_eq!(loaded.get(1, 0, 0), 0.0);
}

#[test]
fn malformed_file_reports_format_or_decode_error() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image at all").unwrap();
    match load_image(&junk) {
        Err(ImageError::UnsupportedFormat { .. }) | Err(ImageError::Decode { .. }) => {}
        other => panic!("expected a format error, got {other:?}"),
    }

    // A PNG header with a truncated body decodes partially at best.
    let valid = dir.path().join("ok.png");
    save_image(&rand_image(1, 16, 16, 0.0, 255.0), &valid).unwrap();
    let bytes = std::fs::read(&valid).unwrap();
    let cut = dir.path().join("cut.png");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_image(&cut).is_err());
}

// ---- luminance ----

#[test]
fn luminance_uses_bt601_weights() {
    let gray = rand_image(2, 5, 5, 0.0, 255.0);
    assert_eq!(to_luminance(&gray), gray);

    let mut rgb = Image::new(1, 1, 3, vec![255.0, 255.0, 255.0]).unwrap();
    assert_eq!(to_luminance(&rgb).get(0, 0, 0), 255.0);
    rgb.data_mut().copy_from_slice(&[255.0, 0.0, 0.0]);
    let red = to_luminance(&rgb).get(0, 0, 0);
    assert!((red - 76.245).abs() < 1e-4, "red luminance {red}");
}

// ---- normalization ----

#[test]
fn normalize_centers_the_dataset_mean() {
    let spec = NormalizationSpec::default();
    let img = Image::new(1, 1, 1, vec![0.370 * 255.0]).unwrap();
    let t: Tensor<f32> = normalize(&img, &spec);
    assert!(t.data()[0].abs() < 1e-6);
}

#[test]
fn denormalize_inverts_and_clamps() {
    let spec = NormalizationSpec::default();
    let img = rand_image(3, 9, 6, 0.0, 255.0);
    let t: Tensor<f32> = normalize(&img, &spec);
    let back = denormalize(&t, &spec).unwrap();
    for (a, b) in back.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    // An out-of-range network output lands on the clamp boundary.
    let below = Tensor::<f32>::new(&[1, 1, 1], vec![-5.0_f32]).unwrap();
    let clamped = denormalize(&below, &spec).unwrap();
    assert_eq!(clamped.get(0, 0, 0), 0.0);
    let above = Tensor::<f32>::new(&[1, 1, 1], vec![100.0_f32]).unwrap();
    assert_eq!(denormalize(&above, &spec).unwrap().get(0, 0, 0), 255.0);
}

proptest! {
    #[test]
    fn normalize_denormalize_is_identity_on_in_range_images(seed in 0u64..200) {
        let spec = NormalizationSpec::default();
        let img = rand_image(seed, 8, 8, 0.0, 255.0);
        let t: Tensor<f32> = normalize(&img, &spec);
        let back = denormalize(&t, &spec).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() < 1e-4 * 255.0);
        }
    }
}

// ---- maximal-information crop ----

#[test]
fn crop_tie_breaks_to_origin() {
    let zeros = Image::zeros(12, 9, 1);
    let (_, offset) = maximal_info_crop(&zeros, 4, 5).unwrap();
    assert_eq!(offset, (0, 0));

    let uniform = Image::from_fn(10, 10, |_, _| 37.0);
    let (_, offset) = maximal_info_crop(&uniform, 5, 5).unwrap();
    assert_eq!(offset, (0, 0));
}

#[test]
fn crop_finds_the_bright_pixel() {
    let mut img = Image::zeros(32, 32, 1);
    img.set(10, 10, 0, 200.0);
    let (crop, (top, left)) = maximal_info_crop(&img, 4, 4).unwrap();
    assert!(top <= 10 && 10 < top + 4);
    assert!(left <= 10 && 10 < left + 4);
    assert_eq!(crop.data().iter().sum::<f32>(), 200.0);
}

#[test]
fn crop_rejects_oversized_windows() {
    let img = Image::zeros(8, 8, 1);
    assert!(matches!(
        maximal_info_crop(&img, 9, 4),
        Err(ImageError::CropTooLarge { .. })
    ));
}

proptest! {
    /// The integral-image argmax equals the exhaustive sliding-window argmax
    /// (u8-valued pixels keep every window sum exact in both routes).
    #[test]
    fn crop_matches_exhaustive_argmax(seed in 0u64..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rng.gen_range(6..64usize);
        let w = rng.gen_range(6..64usize);
        let ch = rng.gen_range(2..=h);
        let cw = rng.gen_range(2..=w);
        let img = Image::from_fn(w, h, |_, _| rng.gen_range(0..=255u8) as f32);

        let (_, got) = maximal_info_crop(&img, ch, cw).unwrap();

        let mut best = (0usize, 0usize);
        let mut best_sum = f64::NEG_INFINITY;
        for top in 0..=h - ch {
            for left in 0..=w - cw {
                let mut s = 0.0f64;
                for y in top..top + ch {
                    for x in left..left + cw {
                        s += img.get(x, y, 0) as f64;
                    }
                }
                if s > best_sum {
                    best_sum = s;
                    best = (top, left);
                }
            }
        }
        prop_assert_eq!(got, best);
    }
}

// ---- patch sampling ----

#[test]
fn patch_geometry_follows_floor_law() {
    let crop = rand_image(11, 100, 100, 0.0, 255.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = sample_patches(&crop, scale(2.0), 16, 48, &mut rng).unwrap();
    assert_eq!(pairs.len(), 16);
    for p in &pairs {
        assert_eq!((p.hr.width(), p.hr.height()), (96, 96));
        assert_eq!((p.lr.width(), p.lr.height()), (48, 48));
    }

    let pairs = sample_patches(&crop, scale(2.5), 4, 20, &mut rng).unwrap();
    for p in &pairs {
        assert_eq!(p.hr.width(), 50);
        assert_eq!(p.lr.width(), 20);
    }
}

#[test]
fn unit_scale_patches_are_identical_pairs() {
    let crop = rand_image(12, 30, 30, 0.0, 255.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs = sample_patches(&crop, scale(1.0), 5, 12, &mut rng).unwrap();
    for p in &pairs {
        assert_eq!(p.lr, p.hr);
    }
}

#[test]
fn too_small_crop_reports_requirements() {
    let crop = rand_image(13, 40, 40, 0.0, 255.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    match sample_patches(&crop, scale(4.0), 1, 48, &mut rng) {
        Err(ImageError::CropTooSmall {
            need,
            avail_h: 40,
            avail_w: 40,
            ..
        }) => assert_eq!(need, 192),
        other => panic!("expected CropTooSmall, got {other:?}"),
    }
}

#[test]
fn patch_sampling_is_deterministic_per_seed() {
    let crop = rand_image(14, 64, 64, 0.0, 255.0);
    let sample = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_patches(&crop, scale(1.7), 8, 16, &mut rng)
            .unwrap()
            .iter()
            .map(|p| p.hr.data().to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(sample(5), sample(5));
    assert_ne!(sample(5), sample(6));
}

proptest! {
    #[test]
    fn hr_extent_is_floor_of_scaled_lr(tenths in 11u32..=40, p_lr in 4usize..32) {
        let r = ScaleFactor::from_tenths(tenths);
        let crop = Image::zeros(140, 140, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_patches(&crop, r, 1, p_lr, &mut rng).unwrap();
        prop_assert_eq!(pairs[0].hr.width(), r.scaled_extent(p_lr));
        prop_assert_eq!(pairs[0].hr.height(), r.scaled_extent(p_lr));
    }
}

// ---- bicubic ----

/// Direct 4x4 weighted sum from the kernel formula, written independently
/// of the library implementation.
fn bicubic_oracle(img: &Image, out_w: usize, out_h: usize) -> Image {
    fn keys(t: f64) -> f64 {
        let a = -0.5;
        let t = t.abs();
        if t <= 1.0 {
            ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
        } else if t < 2.0 {
            (((t - 5.0) * t + 8.0) * t - 4.0) * a
        } else {
            0.0
        }
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    Image::from_fn(out_w, out_h, |ox, oy| {
        let sx = (ox as f64 + 0.5) * img.width() as f64 / out_w as f64 - 0.5;
        let sy = (oy as f64 + 0.5) * img.height() as f64 / out_h as f64 - 0.5;
        let (bx, by) = (sx.floor(), sy.floor());
        let mut acc = 0.0f64;
        for j in -1..=2isize {
            for i in -1..=2isize {
                let xx = (bx as isize + i).clamp(0, w - 1) as usize;
                let yy = (by as isize + j).clamp(0, h - 1) as usize;
                acc += keys(sx - (bx + i as f64)) * keys(sy - (by + j as f64))
                    * img.get(xx, yy, 0) as f64;
            }
        }
        acc as f32
    })
}

#[test]
fn bicubic_same_size_is_identity() {
    let img = rand_image(15, 11, 8, 0.0, 255.0);
    let out = bicubic_resize(&img, 11, 8);
    for (a, b) in out.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn bicubic_ramp_doubling_matches_direct_formula() {
    let ramp = Image::from_fn(4, 4, |x, y| (x + 4 * y) as f32 * 10.0);
    let got = bicubic_resize(&ramp, 8, 8);
    let want = bicubic_oracle(&ramp, 8, 8);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn bicubic_matches_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f32;
    for case in 0..120 {
        let w = rng.gen_range(2..14usize);
        let h = rng.gen_range(2..14usize);
        let ow = rng.gen_range(1..22usize);
        let oh = rng.gen_range(1..22usize);
        let img = rand_image(9000 + case, w, h, 0.0, 255.0);
        let got = bicubic_resize(&img, ow, oh);
        let want = bicubic_oracle(&img, ow, oh);
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-4, "worst abs diff {worst} (on [0,255] data)");
}

proptest! {
    /// Partition of unity: constants stay constant at every output size.
    #[test]
    fn bicubic_preserves_constants(v in 0.0f32..255.0, ow in 1usize..40, oh in 1usize..40) {
        let img = Image::from_fn(7, 5, |_, _| v);
        let out = bicubic_resize(&img, ow, oh);
        for &p in out.data() {
            prop_assert!((p - v).abs() < 1e-4);
        }
    }
}

// ---- scale sampling ----

#[test]
fn sampled_scales_stay_in_the_training_set() {
    let set: Vec<f64> = training_scales().iter().map(|s| s.get()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10_000 {
        let s = sample_scale(&mut rng);
        assert!(set.contains(&s.get()), "{} not a training scale", s.get());
    }
}

#[test]
fn scale_sampling_is_reproducible() {
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| sample_scale(&mut rng).get()).collect::<Vec<_>>()
    };
    assert_eq!(draw(7), draw(7));
}

#[test]
fn scale_sampling_is_uniform_within_three_sigma() {
    // 30k draws: each scale's count is Binomial(n, 1/30);
    // mean 1000, sigma = sqrt(n * p * (1-p)) ~ 31.1.
    let n = 30_000usize;
    let mut counts = [0usize; 30];
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..n {
        let s = sample_scale(&mut rng);
        let idx = ((s.get() * 10.0).round() as usize) - 11;
        counts[idx] += 1;
    }
    let p = 1.0 / 30.0;
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let dev = (c as f64 - mean).abs();
        assert!(
            dev <= 3.0 * sigma,
            "scale {} count {} deviates {:.1} sigma",
            1.1 + i as f64 * 0.1,
            c,
            dev / sigma
        );
    }
}

// ---- dataset listing ----

#[test]
fn dataset_loads_sorted_or_by_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["b.png", "a.png", "c.png"] {
        save_image(&rand_image(77, 20, 20, 0.0, 255.0), dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
    let ds = Dataset::load_dir(dir.path()).unwrap();
    let paths: Vec<&str> = ds.paths().collect();
    assert_eq!(paths, ["a.png", "b.png", "c.png"]);

    std::fs::write(dir.path().join("manifest.txt"), "c.png\na.png\n").unwrap();
    let ds = Dataset::load_dir(dir.path()).unwrap();
    let paths: Vec<&str> = ds.paths().collect();
    assert_eq!(paths, ["c.png", "a.png"]);

    std::fs::write(dir.path().join("manifest.txt"), "missing.png\n").unwrap();
    assert!(matches!(
        Dataset::load_dir(dir.path()),
        Err(ImageError::ManifestEntryMissing { .. })
    ));
}

#[test]
fn empty_dataset_dir_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        Dataset::load_dir(dir.path()),
        Err(ImageError::EmptyDataset(_))
    ));
}
