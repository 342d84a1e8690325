//! Mutable training state: parameters, optimizers, update counter.

use std::path::Path;

use crate::image::{normalize, Image, PatchPair};
use crate::model::{
    loss, Discriminator, DiscriminatorConfig, FeatureExtractor, GeneratorConfig, LossWeights,
    Mode, SrModel, UpscaleConfig,
};
use crate::nn::{Adam, AdamConfig, Graph, Initializer, ParameterStore, Tensor};

use super::{lr_at, TrainConfig, TrainError};

/// Loss record of one update, as written to `loss_log.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based update index.
    pub step: u64,
    pub scale: f64,
    pub lr: f64,
    pub l1: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub perceptual: f64,
    pub total: f64,
}

pub struct TrainState {
    cfg: TrainConfig,
    model: SrModel,
    disc_cfg: DiscriminatorConfig,
    phi: FeatureExtractor,
    store: ParameterStore<f32>,
    gen_opt: Adam<f32>,
    disc_opt: Adam<f32>,
    update_count: u64,
    loss_weights: LossWeights,
}

fn scalar_entry(store: &mut ParameterStore<f32>, name: &str, v: f64) {
    store.insert(name, Tensor::new(&[1], vec![v as f32]).expect("one value"));
}

fn read_scalar(store: &ParameterStore<f32>, name: &str) -> Result<f64, TrainError> {
    Ok(store
        .get(name)
        .map_err(|_| TrainError::MissingEntry(name.to_string()))?
        .data()[0] as f64)
}

impl TrainState {
    /// Fresh state: seeded initialization of generator, upscaler, and
    /// discriminator; `phi_store` supplies pretrained perceptual features
    /// (entries under `phi.`), otherwise the fixed-seed fallback is used.
    pub fn new(
        cfg: TrainConfig,
        model: SrModel,
        disc_cfg: DiscriminatorConfig,
        phi_store: Option<ParameterStore<f32>>,
    ) -> Result<Self, TrainError> {
        let mut store = model.init_params::<f32>(cfg.seed);
        let mut init = Initializer::new(cfg.seed.wrapping_add(1));
        let disc = Discriminator::new(disc_cfg.clone());
        disc.init_into(&mut init, &mut store);

        let phi = match phi_store {
            Some(ps) => {
                let fe = FeatureExtractor::from_store(&ps)?;
                for (name, t) in ps.iter() {
                    if name.starts_with("phi.") {
                        store.insert(name, t.clone());
                    }
                }
                fe
            }
            None => {
                let (fe, ps) = FeatureExtractor::random_fallback::<f32>(model.generator.in_channels);
                for (name, t) in ps.iter() {
                    store.insert(name, t.clone());
                }
                fe
            }
        };

        let adam_cfg = AdamConfig {
            lr: cfg.lr0,
            ..AdamConfig::default()
        };
        let gen_opt = Adam::new(model.trainable_names(), adam_cfg);
        let disc_opt = Adam::new(disc.trainable_names(), adam_cfg);
        Ok(Self {
            cfg,
            model,
            disc_cfg,
            phi,
            store,
            gen_opt,
            disc_opt,
            update_count: 0,
            loss_weights: LossWeights::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Extend (or shorten) the run; the two-phase pretrain flow raises the
    /// target after the first corpus finishes.
    pub fn set_total_updates(&mut self, total: u64) {
        self.cfg.total_updates = total;
    }

    pub fn model(&self) -> &SrModel {
        &self.model
    }

    pub fn store(&self) -> &ParameterStore<f32> {
        &self.store
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Serialize parameters, optimizer moments, architecture, normalization
    /// constants, and the update counter into one `MSRG` file.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut out = self.store.clone();
        self.gen_opt.export_into("optim.gen.", &mut out);
        self.disc_opt.export_into("optim.disc.", &mut out);
        write_arch_entries(&mut out, &self.model, Some(&self.disc_cfg));
        scalar_entry(&mut out, "norm.mean", self.cfg.norm.mean);
        scalar_entry(&mut out, "norm.std", self.cfg.norm.std);
        scalar_entry(&mut out, "trainer.update_count", self.update_count as f64);
        out.save(path)?;
        Ok(())
    }

    /// Rebuild a state from a checkpoint written by [`Self::save_checkpoint`].
    /// Loop parameters come from `cfg`; the architecture comes from the file.
    pub fn from_checkpoint(path: impl AsRef<Path>, cfg: TrainConfig) -> Result<Self, TrainError> {
        let full = ParameterStore::<f32>::load(path)?;
        let (model, disc_cfg) = read_arch_entries(&full)?;
        let disc_cfg = disc_cfg.unwrap_or_default();
        let update_count = read_scalar(&full, "trainer.update_count")? as u64;

        let mut store = ParameterStore::new();
        for (name, t) in full.iter() {
            if name.starts_with("generator.")
                || name.starts_with("meta_upscale.")
                || name.starts_with("discriminator.")
                || name.starts_with("phi.")
            {
                store.insert(name, t.clone());
            }
        }
        let phi = FeatureExtractor::from_store(&store)?;

        let adam_cfg = AdamConfig {
            lr: cfg.lr0,
            ..AdamConfig::default()
        };
        let mut gen_opt = Adam::new(model.trainable_names(), adam_cfg);
        let mut disc_opt = Adam::new(
            Discriminator::new(disc_cfg.clone()).trainable_names(),
            adam_cfg,
        );
        gen_opt.import_from("optim.gen.", &full)?;
        disc_opt.import_from("optim.disc.", &full)?;

        Ok(Self {
            cfg,
            model,
            disc_cfg,
            phi,
            store,
            gen_opt,
            disc_opt,
            update_count,
            loss_weights: LossWeights::default(),
        })
    }

    /// One full update: a discriminator step on the current generator output,
    /// then a generator step through the freshly updated discriminator.
    ///
    /// The SR batch is clamped to the pixel range (expressed in normalized
    /// units) before the discriminator or any loss sees it.
    pub fn train_step(&mut self, batch: &[PatchPair]) -> Result<StepRecord, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let scale = batch[0].scale;
        for pair in batch {
            if pair.scale != scale {
                return Err(TrainError::MixedScales(scale.get(), pair.scale.get()));
            }
        }
        let t = self.update_count;
        let lr_now = lr_at(t, &self.cfg);
        self.gen_opt.set_lr(lr_now);
        self.disc_opt.set_lr(lr_now);

        let in_ch = self.model.generator.in_channels;
        let lr_batch = stack_patches(batch.iter().map(|p| &p.lr), in_ch, &self.cfg)?;
        let hr_batch = stack_patches(batch.iter().map(|p| &p.hr), in_ch, &self.cfg)?;
        let (lo, hi) = self.cfg.norm.normalized_pixel_range();

        // --- generator graph: forward once, reused by both phases ---
        let mut ga = Graph::<f32>::new();
        let gen_trainable = self.model.trainable_names();
        let bound_g = ga.bind_where(
            &self.store,
            |n| n.starts_with("generator.") || n.starts_with("meta_upscale."),
            |n| gen_trainable.iter().any(|t| t == n),
        );
        let lr_id = ga.constant(lr_batch);
        let hr_id = ga.constant(hr_batch);
        let sr = self
            .model
            .forward(&mut ga, &bound_g, lr_id, scale, Mode::Train)?;
        let sr_clamped = ga.clamp(sr, lo as f32, hi as f32);
        let sr_detached = ga.to_tensor(sr_clamped);

        // --- discriminator step ---
        let disc = Discriminator::new(self.disc_cfg.clone());
        let disc_trainable = disc.trainable_names();
        let adv_d = {
            let mut gd = Graph::<f32>::new();
            let bound_d = gd.bind_where(
                &self.store,
                |n| n.starts_with("discriminator."),
                |n| disc_trainable.iter().any(|t| t == n),
            );
            let hr_const = gd.constant(ga.to_tensor(hr_id));
            let sr_const = gd.constant(sr_detached);
            let d_real = disc.forward(&mut gd, &bound_d, hr_const, Mode::Train)?;
            let d_fake = disc.forward(&mut gd, &bound_d, sr_const, Mode::Train)?;
            let (_, disc_loss) = loss::adversarial_losses(&mut gd, d_real, d_fake)?;
            gd.backward(disc_loss)?;
            let grads = gd.collect_grads(&bound_d, &disc_trainable)?;
            self.disc_opt.step(&mut self.store, &grads)?;
            for (name, values) in gd.take_buffer_updates() {
                if name.starts_with("discriminator.") {
                    self.store.set_values(&name, values)?;
                }
            }
            gd.scalar_value(disc_loss) as f64
        };

        // --- generator step through the updated discriminator ---
        let bound_d2 = ga.bind_where(
            &self.store,
            |n| n.starts_with("discriminator."),
            |_| false,
        );
        let d_fake2 = disc.forward(&mut ga, &bound_d2, sr_clamped, Mode::Train)?;
        let bound_phi = ga.bind_where(&self.store, |n| n.starts_with("phi."), |_| false);
        let parts = loss::total_generator_loss(
            &mut ga,
            sr_clamped,
            hr_id,
            d_fake2,
            &self.phi,
            &bound_phi,
            &self.loss_weights,
        )?;
        ga.backward(parts.total)?;
        let grads = ga.collect_grads(&bound_g, &gen_trainable)?;
        self.gen_opt.step(&mut self.store, &grads)?;
        for (name, values) in ga.take_buffer_updates() {
            // The d_fake2 pass queues discriminator stat updates too; only the
            // discriminator phase owns those, so they are dropped here.
            if name.starts_with("generator.") || name.starts_with("meta_upscale.") {
                self.store.set_values(&name, values)?;
            }
        }

        self.update_count += 1;
        Ok(StepRecord {
            step: self.update_count,
            scale: scale.get(),
            lr: lr_now,
            l1: ga.scalar_value(parts.l1) as f64,
            adv_g: ga.scalar_value(parts.adversarial) as f64,
            adv_d,
            perceptual: ga.scalar_value(parts.perceptual) as f64,
            total: ga.scalar_value(parts.total) as f64,
        })
    }
}

/// Stack normalized `[C,h,w]` patches into an `[N,C,h,w]` batch, adapting
/// channel count to the model (luminance for 1, replication for 3).
fn stack_patches<'a>(
    patches: impl Iterator<Item = &'a Image>,
    in_channels: usize,
    cfg: &TrainConfig,
) -> Result<Tensor<f32>, TrainError> {
    let mut tensors: Vec<Tensor<f32>> = Vec::new();
    for img in patches {
        let adapted = adapt_channels(img, in_channels);
        tensors.push(normalize::<f32>(&adapted, &cfg.norm));
    }
    let n = tensors.len();
    let shape = tensors[0].shape().to_vec();
    let mut data = Vec::with_capacity(n * tensors[0].numel());
    for t in &tensors {
        data.extend_from_slice(t.data());
    }
    let full_shape = [&[n], shape.as_slice()].concat();
    Ok(Tensor::new(&full_shape, data)?)
}

pub(crate) fn adapt_channels(img: &Image, in_channels: usize) -> Image {
    if img.channels() == in_channels {
        return img.clone();
    }
    if in_channels == 1 {
        crate::image::to_luminance(img)
    } else {
        // Replicate grayscale into RGB.
        let mut data = Vec::with_capacity(img.width() * img.height() * 3);
        for &v in img.data() {
            data.extend_from_slice(&[v, v, v]);
        }
        Image::new(img.width(), img.height(), 3, data).expect("sized")
    }
}

/// Write architecture/normalization entries so a checkpoint is
/// self-describing.
pub(crate) fn write_arch_entries(
    store: &mut ParameterStore<f32>,
    model: &SrModel,
    disc: Option<&DiscriminatorConfig>,
) {
    scalar_entry(store, "config.num_features", model.generator.num_features as f64);
    scalar_entry(
        store,
        "config.num_res_blocks",
        model.generator.num_res_blocks as f64,
    );
    scalar_entry(store, "config.kernel_size", model.generator.kernel_size as f64);
    scalar_entry(store, "config.head_kernel", model.generator.head_kernel as f64);
    scalar_entry(store, "config.in_channels", model.generator.in_channels as f64);
    scalar_entry(store, "config.wpn_hidden", model.upscale.wpn_hidden as f64);
    scalar_entry(store, "config.out_channels", model.upscale.out_channels as f64);
    if let Some(d) = disc {
        scalar_entry(store, "config.disc_dense_width", d.dense_width as f64);
    }
}

/// Rebuild model configuration from checkpoint entries.
pub(crate) fn read_arch_entries(
    store: &ParameterStore<f32>,
) -> Result<(SrModel, Option<DiscriminatorConfig>), TrainError> {
    let gen = GeneratorConfig {
        num_features: read_scalar(store, "config.num_features")? as usize,
        num_res_blocks: read_scalar(store, "config.num_res_blocks")? as usize,
        kernel_size: read_scalar(store, "config.kernel_size")? as usize,
        head_kernel: read_scalar(store, "config.head_kernel")? as usize,
        in_channels: read_scalar(store, "config.in_channels")? as usize,
    };
    let ups = UpscaleConfig {
        in_features: gen.num_features,
        wpn_hidden: read_scalar(store, "config.wpn_hidden")? as usize,
        out_channels: read_scalar(store, "config.out_channels")? as usize,
    };
    let disc = read_scalar(store, "config.disc_dense_width")
        .ok()
        .map(|w| DiscriminatorConfig {
            in_channels: gen.in_channels,
            dense_width: w as usize,
        });
    Ok((SrModel::new(gen, ups), disc))
}
