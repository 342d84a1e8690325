//! The optimization loop: per-batch scale sampling, alternating
//! discriminator/generator updates, the geometric learning-rate schedule,
//! pixel clamping, checkpointing, and loss logging.
//!
//! All randomness is derived from `(seed, step)`, so a resumed run replays
//! the exact batch sequence of an uninterrupted one and checkpoints carry
//! no RNG state.

mod state;

pub use state::{StepRecord, TrainState};

pub(crate) mod state_io {
    pub(crate) use super::state::{adapt_channels, read_arch_entries};
}

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{
    maximal_info_crop, sample_patches, Dataset, Image, ImageError, NormalizationSpec, PatchPair,
    ScaleFactor,
};
use crate::model::ModelError;
use crate::nn::{CheckpointError, NnError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("a batch must share one scale factor, got {0} and {1}")]
    MixedScales(f64, f64),
    #[error("train_step got an empty batch")]
    EmptyBatch,
    #[error("dataset images too small for p_lr={p_lr} at scale {max_scale} (need a {need}x{need} crop): {offenders:?}")]
    ImagesTooSmall {
        p_lr: usize,
        max_scale: f64,
        need: usize,
        offenders: Vec<String>,
    },
    #[error("checkpoint is missing required entry \"{0}\"")]
    MissingEntry(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything the loop needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_updates: u64,
    pub batch_size: usize,
    /// Initial learning rate for both optimizers.
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_interval` updates.
    pub decay_factor: f64,
    pub decay_interval: u64,
    /// LR patch side; the HR patch side is `floor(p_lr * r)`.
    pub p_lr: usize,
    pub seed: u64,
    pub checkpoint_interval: u64,
    /// Fraction of each image extent used by the maximal-information crop.
    pub crop_fraction: f64,
    /// Scales sampled uniformly per batch.
    pub scales: Vec<ScaleFactor>,
    pub norm: NormalizationSpec,
}

impl Default for TrainConfig {
    /// Desk-scale defaults; the paper-scale run only changes values here
    /// (360k updates, p_lr 48, the full scale set).
    fn default() -> Self {
        Self {
            total_updates: 500,
            batch_size: 8,
            lr0: 1e-4,
            decay_factor: 0.8,
            decay_interval: 60_000,
            p_lr: 48,
            seed: 42,
            checkpoint_interval: 1000,
            crop_fraction: 0.5,
            scales: crate::image::training_scales().to_vec(),
            norm: NormalizationSpec::default(),
        }
    }
}

/// `lr0 * decay_factor^floor(t / decay_interval)` — the "cut by 20% every
/// 60k updates" schedule read multiplicatively.
pub fn lr_at(t: u64, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((t / cfg.decay_interval) as i32)
}

/// Deterministic per-step RNG: batches depend only on `(seed, step)`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Maximal-information crops of every dataset image, computed once.
#[derive(Debug)]
pub struct PreparedData {
    pub crops: Vec<Image>,
}

/// Crop the dataset and verify every crop can host an HR patch at the
/// largest configured scale; offenders are reported up front.
pub fn prepare(dataset: &Dataset, cfg: &TrainConfig) -> Result<PreparedData, TrainError> {
    let max_scale = cfg
        .scales
        .iter()
        .map(|s| s.get())
        .fold(f64::NEG_INFINITY, f64::max);
    let need = ScaleFactor::new(max_scale)
        .expect("validated scale")
        .scaled_extent(cfg.p_lr);

    let mut crops = Vec::with_capacity(dataset.len());
    let mut offenders = Vec::new();
    for entry in &dataset.entries {
        let img = &entry.image;
        let crop_h = ((img.height() as f64 * cfg.crop_fraction).floor() as usize).max(1);
        let crop_w = ((img.width() as f64 * cfg.crop_fraction).floor() as usize).max(1);
        let (crop, _) = maximal_info_crop(img, crop_h.min(img.height()), crop_w.min(img.width()))?;
        if crop.height() < need || crop.width() < need {
            offenders.push(entry.path.clone());
        }
        crops.push(crop);
    }
    if !offenders.is_empty() {
        return Err(TrainError::ImagesTooSmall {
            p_lr: cfg.p_lr,
            max_scale,
            need,
            offenders,
        });
    }
    Ok(PreparedData { crops })
}

/// The batch for update `step`: one scale, `batch_size` patch pairs.
pub fn make_batch(
    prepared: &PreparedData,
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<PatchPair>, TrainError> {
    let mut rng = step_rng(cfg.seed, step);
    let scale = cfg.scales[rng.gen_range(0..cfg.scales.len())];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let img_idx = rng.gen_range(0..prepared.crops.len());
        let mut pair = sample_patches(&prepared.crops[img_idx], scale, 1, cfg.p_lr, &mut rng)?;
        batch.append(&mut pair);
    }
    Ok(batch)
}

/// Run (or resume) training to `cfg.total_updates`, writing `ckpt_{n}.msrg`
/// checkpoints and appending to `loss_log.csv` in `out_dir`. Returns the
/// per-step loss records of this run segment.
pub fn train(
    state: &mut TrainState,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<Vec<StepRecord>, TrainError> {
    let cfg = state.config().clone();
    let prepared = prepare(dataset, &cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;

    let log_path = out_dir.join("loss_log.csv");
    let fresh_log = !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| TrainError::Io {
            path: log_path.clone(),
            source: e,
        })?;
    if fresh_log {
        writeln!(log, "step,scale,lr,l1,adv_g,adv_d,perceptual,total").map_err(|e| {
            TrainError::Io {
                path: log_path.clone(),
                source: e,
            }
        })?;
    }

    let ckpt = |state: &TrainState, n: u64| -> Result<(), TrainError> {
        let path = out_dir.join(format!("ckpt_{n}.msrg"));
        state.save_checkpoint(&path)?;
        Ok(())
    };

    if state.update_count() == 0 {
        ckpt(state, 0)?;
    }

    let mut records = Vec::new();
    while state.update_count() < cfg.total_updates {
        let step = state.update_count();
        let batch = make_batch(&prepared, &cfg, step)?;
        let record = state.train_step(&batch)?;
        writeln!(
            log,
            "{},{},{},{},{},{},{},{}",
            record.step,
            record.scale,
            record.lr,
            record.l1,
            record.adv_g,
            record.adv_d,
            record.perceptual,
            record.total
        )
        .map_err(|e| TrainError::Io {
            path: log_path.clone(),
            source: e,
        })?;
        log.flush().map_err(|e| TrainError::Io {
            path: log_path.clone(),
            source: e,
        })?;
        records.push(record);

        let n = state.update_count();
        if cfg.checkpoint_interval > 0 && n % cfg.checkpoint_interval == 0 && n < cfg.total_updates
        {
            ckpt(state, n)?;
        }
    }
    ckpt(state, state.update_count())?;
    Ok(records)
}
