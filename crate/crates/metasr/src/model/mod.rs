//! The super-resolution networks and their losses.
//!
//! [`Generator`] is the SRGAN-style feature trunk; [`upscale`] turns its
//! 64-channel LR feature map into an HR image at any scale by predicting
//! per-pixel filter weights; [`Discriminator`] and the loss functions in
//! [`loss`] drive adversarial training.

mod discriminator;
mod features;
pub mod loss;
mod generator;
mod upscale;

use thiserror::Error;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use features::{FeatureExtractor, PHI_FALLBACK_SEED};
pub use generator::{Generator, GeneratorConfig};
pub use loss::LossWeights;
pub use upscale::{
    apply, predict_weights, project, upscale, PixelProjection, UpscaleConfig,
    WeightPredictionNet, META_KERNEL,
};

use crate::image::ScaleFactor;
use crate::nn::{Bound, Element, Graph, Initializer, NnError, ParameterStore, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("generator input {h}x{w} is smaller than the {k}x{k} head kernel")]
    InputTooSmall { h: usize, w: usize, k: usize },
    #[error("model expects {expected} input channels, got {got}")]
    WrongChannels { expected: usize, got: usize },
    #[error("discriminator needs input extents >= {min}, got {h}x{w}")]
    DiscriminatorTooSmall { min: usize, h: usize, w: usize },
    #[error("projection scale must be >= 1 (this module only upscales), got {0}")]
    ScaleBelowOne(f64),
    #[error("predicted weights have {rows} rows but the target image has {expected} pixels ({h}x{w})")]
    WeightRows {
        rows: usize,
        expected: usize,
        h: usize,
        w: usize,
    },
    #[error("predicted weights have {cols} columns, expected {expected} (out_channels x features x 3 x 3)")]
    WeightCols { cols: usize, expected: usize },
    #[error("feature extractor store has no conv layers (expected \"phi.conv0.weight\")")]
    EmptyExtractor,
}

/// Forward-pass mode: training uses batch statistics in batch-norm and
/// queues running-stat updates; eval uses the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Shape and trainability of one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// The deployable SR network: generator trunk plus weight-prediction
/// upscaler. One parameter set serves every scale factor.
#[derive(Clone, Debug)]
pub struct SrModel {
    pub generator: GeneratorConfig,
    pub upscale: UpscaleConfig,
}

impl SrModel {
    pub fn new(generator: GeneratorConfig, mut upscale: UpscaleConfig) -> Self {
        // Fig. 3 fixes the upscaler's input width to the trunk's channel count.
        upscale.in_features = generator.num_features;
        Self { generator, upscale }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Generator::new(self.generator.clone()).param_specs();
        specs.extend(WeightPredictionNet::new(self.upscale.clone()).param_specs());
        specs
    }

    /// Names of the trainable parameters (optimizer set).
    pub fn trainable_names(&self) -> Vec<String> {
        self.param_specs()
            .into_iter()
            .filter(|s| s.trainable)
            .map(|s| s.name)
            .collect()
    }

    /// Exact count of trainable scalars in generator + weight predictor.
    pub fn count_parameters(&self) -> usize {
        self.param_specs()
            .iter()
            .filter(|s| s.trainable)
            .map(ParamSpec::numel)
            .sum()
    }

    /// Seeded initialization of all entries (parameters and buffers).
    pub fn init_params<E: Element>(&self, seed: u64) -> ParameterStore<E> {
        let mut init = Initializer::new(seed);
        let mut store = ParameterStore::new();
        Generator::new(self.generator.clone()).init_into(&mut init, &mut store);
        WeightPredictionNet::new(self.upscale.clone()).init_into(&mut init, &mut store);
        store
    }

    /// LR batch `[N, in_channels, h, w]` to SR batch
    /// `[N, out_channels, floor(r*h), floor(r*w)]`.
    pub fn forward<E: Element>(
        &self,
        g: &mut Graph<E>,
        bound: &Bound,
        lr: TensorId,
        r: ScaleFactor,
        mode: Mode,
    ) -> Result<TensorId, ModelError> {
        let generator = Generator::new(self.generator.clone());
        let features = generator.forward(g, bound, lr, mode)?;
        upscale(g, bound, &self.upscale, features, r)
    }
}

impl Default for SrModel {
    fn default() -> Self {
        Self::new(GeneratorConfig::default(), UpscaleConfig::default())
    }
}

/// Parameters that make the whole SR network a pixel gather: the trunk
/// copies its input into feature channel 0 and the upscaler selects that
/// channel at each projected position. At scale 1.0 the network reproduces
/// its input exactly (useful for smoke-testing deployments); at larger
/// scales it degrades to nearest-neighbor upsampling.
pub fn passthrough_parameters<E: Element>(model: &SrModel) -> ParameterStore<E> {
    let mut store = model.init_params(0);
    let gen = &model.generator;
    let k = META_KERNEL;
    let hk = gen.head_kernel;
    let f = gen.num_features;

    let zero = |store: &mut ParameterStore<E>, name: &str| {
        let shape = store.get(name).expect("known entry").shape().to_vec();
        store
            .set_values(name, vec![E::ZERO; shape.iter().product()])
            .expect("same size");
    };

    // Head: channel 0 reads the input pixel, all other channels are zero.
    let head_shape = vec![f, gen.in_channels, hk, hk];
    let mut head = vec![E::ZERO; head_shape.iter().product()];
    head[(hk / 2) * hk + hk / 2] = E::ONE; // out channel 0, in channel 0, center
    store
        .set_values("generator.head.weight", head)
        .expect("same size");
    zero(&mut store, "generator.head.bias");
    store
        .set_values("generator.head.prelu", vec![E::ONE])
        .expect("one value");

    // Zeroed residual blocks are identity maps; a zeroed post stage makes the
    // long skip pass the head output through unchanged.
    for b in 0..gen.num_res_blocks {
        for conv in ["conv1", "conv2"] {
            zero(&mut store, &format!("generator.block{b}.{conv}.weight"));
            zero(&mut store, &format!("generator.block{b}.{conv}.bias"));
        }
        for bn in ["bn1", "bn2"] {
            zero(&mut store, &format!("generator.block{b}.{bn}.gamma"));
            zero(&mut store, &format!("generator.block{b}.{bn}.beta"));
        }
    }
    zero(&mut store, "generator.post.weight");
    zero(&mut store, "generator.post.bias");
    zero(&mut store, "generator.post_bn.gamma");
    zero(&mut store, "generator.post_bn.beta");

    // Weight predictor: constant one-hot picking (channel 0, kernel center).
    for fc in ["fc1", "fc2", "fc3"] {
        zero(&mut store, &format!("meta_upscale.{fc}.weight"));
        zero(&mut store, &format!("meta_upscale.{fc}.bias"));
    }
    let ups = &model.upscale;
    let cols = ups.out_channels * ups.in_features * k * k;
    let mut last_bias = vec![E::ZERO; cols];
    last_bias[(k / 2) * k + k / 2] = E::ONE; // out channel 0, feature 0, center
    store
        .set_values("meta_upscale.fc3.bias", last_bias)
        .expect("same size");
    store
}
