//! Flat `key=value` run configuration.
//!
//! One text file mirrors every training and architecture field; `#` starts a
//! comment and unknown keys are errors, so typos never pass silently.
//! Command-line flags override file values by calling [`RunConfig::set`].

use std::path::Path;

use thiserror::Error;

use crate::image::{NormalizationSpec, ScaleFactor};
use crate::model::{DiscriminatorConfig, GeneratorConfig, SrModel, UpscaleConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key \"{0}\"")]
    UnknownKey(String),
    #[error("line {line}: expected key=value, got \"{text}\"")]
    BadLine { line: usize, text: String },
    #[error("key \"{key}\": cannot parse \"{value}\" as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key \"{key}\": {detail}")]
    Invalid { key: String, detail: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a run needs, with desk-scale defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub upscale: UpscaleConfig,
    pub disc_dense_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            upscale: UpscaleConfig::default(),
            disc_dense_width: DiscriminatorConfig::default().dense_width,
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: &[&str] = &[
    "total_updates",
    "batch_size",
    "lr0",
    "decay_factor",
    "decay_interval",
    "p_lr",
    "seed",
    "checkpoint_interval",
    "crop_fraction",
    "scales",
    "norm_mean",
    "norm_std",
    "num_features",
    "num_res_blocks",
    "kernel_size",
    "head_kernel",
    "in_channels",
    "wpn_hidden",
    "out_channels",
    "disc_dense_width",
];

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Set one key from its textual value; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            key: &str,
            value: &str,
            expected: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }
        match key {
            "total_updates" => self.train.total_updates = parse(key, value, "integer")?,
            "batch_size" => self.train.batch_size = parse(key, value, "integer")?,
            "lr0" => self.train.lr0 = parse(key, value, "real")?,
            "decay_factor" => self.train.decay_factor = parse(key, value, "real")?,
            "decay_interval" => self.train.decay_interval = parse(key, value, "integer")?,
            "p_lr" => self.train.p_lr = parse(key, value, "integer")?,
            "seed" => self.train.seed = parse(key, value, "integer")?,
            "checkpoint_interval" => {
                self.train.checkpoint_interval = parse(key, value, "integer")?
            }
            "crop_fraction" => {
                let v: f64 = parse(key, value, "real")?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(ConfigError::Invalid {
                        key: key.to_string(),
                        detail: format!("crop fraction must be in (0, 1], got {v}"),
                    });
                }
                self.train.crop_fraction = v;
            }
            "scales" => {
                let mut scales = Vec::new();
                for part in value.split(',') {
                    let r: f64 = parse(key, part.trim(), "real")?;
                    scales.push(ScaleFactor::new(r).map_err(|e| ConfigError::Invalid {
                        key: key.to_string(),
                        detail: e.to_string(),
                    })?);
                }
                if scales.is_empty() {
                    return Err(ConfigError::Invalid {
                        key: key.to_string(),
                        detail: "at least one scale is required".into(),
                    });
                }
                self.train.scales = scales;
            }
            "norm_mean" => {
                let mean = parse(key, value, "real")?;
                self.train.norm = NormalizationSpec::new(mean, self.train.norm.std).map_err(
                    |e| ConfigError::Invalid {
                        key: key.to_string(),
                        detail: e.to_string(),
                    },
                )?;
            }
            "norm_std" => {
                let std = parse(key, value, "real")?;
                self.train.norm = NormalizationSpec::new(self.train.norm.mean, std).map_err(
                    |e| ConfigError::Invalid {
                        key: key.to_string(),
                        detail: e.to_string(),
                    },
                )?;
            }
            "num_features" => self.generator.num_features = parse(key, value, "integer")?,
            "num_res_blocks" => self.generator.num_res_blocks = parse(key, value, "integer")?,
            "kernel_size" => self.generator.kernel_size = parse(key, value, "integer")?,
            "head_kernel" => self.generator.head_kernel = parse(key, value, "integer")?,
            "in_channels" => self.generator.in_channels = parse(key, value, "integer")?,
            "wpn_hidden" => self.upscale.wpn_hidden = parse(key, value, "integer")?,
            "out_channels" => self.upscale.out_channels = parse(key, value, "integer")?,
            "disc_dense_width" => self.disc_dense_width = parse(key, value, "integer")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn model(&self) -> SrModel {
        SrModel::new(self.generator.clone(), self.upscale.clone())
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: self.generator.in_channels,
            dense_width: self.disc_dense_width,
        }
    }
}
