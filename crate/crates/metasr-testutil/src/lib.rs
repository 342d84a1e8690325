//! Shared verification machinery for the test suites.
//!
//! The finite-difference harness here is the *oracle* side of every gradient
//! check: it evaluates a loss closure twice per probed coordinate and never
//! touches the library's backward pass.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metasr::image::Image;
use metasr::nn::{Element, ParameterStore, Tensor};

/// `|a - b| / max(|a|, |b|)`, treating a pair that is jointly tiny as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        return 0.0;
    }
    (a - b).abs() / scale
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` on one store coordinate.
pub fn central_diff(
    store: &ParameterStore<f64>,
    name: &str,
    idx: usize,
    h: f64,
    f: &dyn Fn(&ParameterStore<f64>) -> f64,
) -> f64 {
    let mut plus = store.clone();
    plus.get_mut(name).expect("known entry").data_mut()[idx] += h;
    let mut minus = store.clone();
    minus.get_mut(name).expect("known entry").data_mut()[idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// One disagreement between analytic and numeric derivatives.
#[derive(Debug)]
pub struct GradMismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a sampled finite-difference sweep.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_rel_err: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheck {
    pub fn assert_ok(&self, tol: f64) {
        assert!(
            self.failures.is_empty(),
            "{} of {} sampled coordinates exceeded rel err {tol} (worst {:.3e}); first: {:?}",
            self.failures.len(),
            self.checked,
            self.worst_rel_err,
            self.failures.first()
        );
    }
}

/// Probe up to `samples_per_param` random coordinates of every named entry,
/// comparing `analytic` gradients against central differences of `loss_fn`
/// (step `h`, tolerance `tol`).
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    store: &ParameterStore<f64>,
    names: &[String],
    analytic: &[(String, Vec<f64>)],
    loss_fn: &dyn Fn(&ParameterStore<f64>) -> f64,
    samples_per_param: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> GradCheck {
    let grad_of = |name: &str| -> &[f64] {
        &analytic
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no analytic gradient for {name}"))
            .1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for name in names {
        let numel = store.get(name).expect("known entry").numel();
        let grads = grad_of(name);
        assert_eq!(grads.len(), numel, "gradient shape mismatch for {name}");
        let picks: Vec<usize> = if numel <= samples_per_param {
            (0..numel).collect()
        } else {
            (0..samples_per_param)
                .map(|_| rng.gen_range(0..numel))
                .collect()
        };
        for idx in picks {
            let numeric = central_diff(store, name, idx, h, loss_fn);
            let analytic_v = grads[idx];
            let e = rel_err(analytic_v, numeric);
            out.checked += 1;
            if e > out.worst_rel_err {
                out.worst_rel_err = e;
            }
            if e > tol {
                out.failures.push(GradMismatch {
                    name: name.clone(),
                    index: idx,
                    analytic: analytic_v,
                    numeric,
                    rel_err: e,
                });
            }
        }
    }
    out
}

/// Uniform random tensor on `[lo, hi)` from a fixed seed.
pub fn rand_tensor<E: Element>(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| E::from_f64(rng.gen_range(lo..hi)))
}

/// Uniform random single-channel image with values in `[lo, hi)`.
pub fn rand_image(seed: u64, width: usize, height: usize, lo: f32, hi: f32) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, |_, _| rng.gen_range(lo..hi))
}

/// Deterministic structured test images: a bright elliptical foreground on a
/// dark background, filled with sharp texture (checker tiles, sinusoid
/// products, hard-edged discs). The high-frequency content is what separates
/// a learned upsampler from plain interpolation.
pub fn synthetic_images(seed: u64, count: usize, size: usize) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let cx = size as f64 / 2.0 + rng.gen_range(-4.0..4.0);
            let cy = size as f64 / 2.0 + rng.gen_range(-4.0..4.0);
            let ax = size as f64 * rng.gen_range(0.30..0.42);
            let ay = size as f64 * rng.gen_range(0.30..0.42);
            let checker = rng.gen_range(2..5) as f64;
            let fx = rng.gen_range(0.25..0.9);
            let fy = rng.gen_range(0.25..0.9);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let n_discs = rng.gen_range(2..5);
            let discs: Vec<(f64, f64, f64, f64)> = (0..n_discs)
                .map(|_| {
                    (
                        rng.gen_range(0.25 * size as f64..0.75 * size as f64),
                        rng.gen_range(0.25 * size as f64..0.75 * size as f64),
                        rng.gen_range(3.0..8.0),
                        rng.gen_range(40.0..255.0),
                    )
                })
                .collect();

            Image::from_fn(size, size, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                let dx = (xf - cx) / ax;
                let dy = (yf - cy) / ay;
                if dx * dx + dy * dy > 1.0 {
                    return 0.0;
                }
                let stripes = ((fx * xf + phase).sin() * (fy * yf).cos()).abs();
                let tile = (((xf / checker).floor() + (yf / checker).floor()) as i64) % 2;
                let mut v = 60.0 + 120.0 * stripes + if tile == 0 { 55.0 } else { 0.0 };
                for &(dcx, dcy, r, level) in &discs {
                    if (xf - dcx).powi(2) + (yf - dcy).powi(2) < r * r {
                        v = level;
                    }
                }
                v.clamp(0.0, 255.0) as f32
            })
        })
        .collect()
}
