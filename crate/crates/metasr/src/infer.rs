//! Inference-time composition: run a checkpoint on images and score it
//! against the bicubic baseline.

use std::path::Path;

use crate::image::{
    bicubic_resize, denormalize, maximal_info_crop, normalize, to_luminance, Dataset, Image,
    NormalizationSpec, ScaleFactor,
};
use crate::metrics::{evaluate_set, MetricReport, PairScores};
use crate::model::{Mode, SrModel};
use crate::nn::{Graph, ParameterStore, Tensor};
use crate::train::TrainError;

/// A checkpoint ready for inference: architecture, parameters, and the
/// normalization constants it was trained with.
pub struct LoadedModel {
    pub model: SrModel,
    pub store: ParameterStore<f32>,
    pub norm: NormalizationSpec,
}

impl LoadedModel {
    pub fn from_checkpoint(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let full = ParameterStore::<f32>::load(path)?;
        let (model, _) = crate::train::state_io::read_arch_entries(&full)?;
        let norm = NormalizationSpec::new(
            full.get("norm.mean")
                .map_err(|_| TrainError::MissingEntry("norm.mean".into()))?
                .data()[0] as f64,
            full.get("norm.std")
                .map_err(|_| TrainError::MissingEntry("norm.std".into()))?
                .data()[0] as f64,
        )
        .map_err(TrainError::Image)?;
        let mut store = ParameterStore::new();
        for (name, t) in full.iter() {
            if name.starts_with("generator.") || name.starts_with("meta_upscale.") {
                store.insert(name, t.clone());
            }
        }
        Ok(Self { model, store, norm })
    }

    /// Super-resolve one image by factor `r` (eval mode, clamped output).
    /// Output extents are `(floor(r*h), floor(r*w))`.
    pub fn upscale_image(&self, img: &Image, r: ScaleFactor) -> Result<Image, TrainError> {
        let adapted = crate::train::state_io::adapt_channels(img, self.model.generator.in_channels);
        let t = normalize::<f32>(&adapted, &self.norm);
        let shape = [&[1usize], t.shape()].concat();
        let batch = Tensor::new(&shape, t.into_data())?;

        let mut g = Graph::<f32>::new();
        let bound = g.bind(&self.store, |_| false);
        let lr_id = g.constant(batch);
        let sr = self.model.forward(&mut g, &bound, lr_id, r, Mode::Eval)?;
        let sr_t = g.to_tensor(sr);
        let shape = sr_t.shape().to_vec();
        let chw = sr_t.reshaped(&shape[1..])?;
        Ok(denormalize(&chw, &self.norm)?)
    }
}

/// One evaluated image: model and baseline scores at a scale.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub path: String,
    pub scale: f64,
    pub model: PairScores,
    pub bicubic: PairScores,
}

/// Evaluation of a dataset at one scale.
pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    pub model_report: MetricReport,
    pub bicubic_report: MetricReport,
}

/// Fig-6-style protocol: per image, take the maximal-information crop, trim
/// it to `(floor(r*floor(crop/r)))` so extents match, derive the LR input by
/// bicubic downsampling, and score the model's SR output and the bicubic
/// reconstruction against the trimmed crop on the luminance channel.
pub fn evaluate_against_bicubic(
    loaded: &LoadedModel,
    dataset: &Dataset,
    r: ScaleFactor,
    crop_fraction: f64,
) -> Result<EvalOutcome, TrainError> {
    let mut sr_images = Vec::with_capacity(dataset.len());
    let mut bicubic_images = Vec::with_capacity(dataset.len());
    let mut references = Vec::with_capacity(dataset.len());

    for entry in &dataset.entries {
        let img = to_luminance(&entry.image);
        let crop_h = ((img.height() as f64 * crop_fraction).floor() as usize)
            .clamp(1, img.height());
        let crop_w =
            ((img.width() as f64 * crop_fraction).floor() as usize).clamp(1, img.width());
        let (crop, _) = maximal_info_crop(&img, crop_h, crop_w)?;

        let lr_h = (crop.height() as f64 / r.get()).floor() as usize;
        let lr_w = (crop.width() as f64 / r.get()).floor() as usize;
        let hr_h = r.scaled_extent(lr_h);
        let hr_w = r.scaled_extent(lr_w);
        let reference = crop.window(0, 0, hr_w, hr_h);
        let lr = bicubic_resize(&reference, lr_w, lr_h);

        sr_images.push(loaded.upscale_image(&lr, r)?);
        bicubic_images.push(bicubic_resize(&lr, hr_w, hr_h));
        references.push(reference);
    }

    let model_report = evaluate_set(&sr_images, &references)?;
    let bicubic_report = evaluate_set(&bicubic_images, &references)?;
    let rows = dataset
        .paths()
        .zip(model_report.per_image.iter())
        .zip(bicubic_report.per_image.iter())
        .map(|((path, m), b)| EvalRow {
            path: path.to_string(),
            scale: r.get(),
            model: *m,
            bicubic: *b,
        })
        .collect();
    Ok(EvalOutcome {
        rows,
        model_report,
        bicubic_report,
    })
}
