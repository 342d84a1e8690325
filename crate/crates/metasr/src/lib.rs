//! Arbitrary-scale single-image super-resolution on the CPU.
//!
//! The crate bundles everything needed to train and run a small GAN-based
//! super-resolution model whose upsampling stage predicts its own filter
//! weights from the requested scale factor, so one trained network serves
//! any magnification ratio (non-integer ones included):
//!
//! * [`nn`] — a minimal tape-based autodiff substrate: tensors, conv/dense/
//!   batch-norm layers, Adam, and the `MSRG` checkpoint format.
//! * [`image`] — image I/O, normalization, maximal-information cropping,
//!   patch sampling, and bicubic resampling.
//! * [`metrics`] — PSNR and SSIM on the luminance channel.
//! * [`model`] — the generator trunk, the meta-upscale module, the
//!   discriminator, and the loss functions.
//! * [`train`] — the optimization loop: per-batch scale sampling,
//!   alternating updates, learning-rate schedule, checkpoint/resume.
//! * [`config`] — the flat `key=value` run configuration shared by the
//!   library and the CLI.
//!
//! A narrative guide with runnable snippets lives in `book/`; the same
//! chapters are doc-tested through the [`guide`] module.

pub mod config;
pub mod guide;
pub mod image;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;
