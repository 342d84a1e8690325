//! The frozen feature extractor behind the perceptual loss.
//!
//! Two providers share one representation (a plain conv/ReLU stack read from
//! a parameter store): externally converted pretrained weights loaded from
//! an `MSRG` file, or a fixed-seed random stack when none is supplied.
//! Gradients flow *through* the extractor into the SR image, never into it.

use crate::nn::{Bound, Element, Graph, Initializer, ParameterStore, Tensor, TensorId};

use super::{Mode, ModelError, ParamSpec};

/// Seed of the random fallback stack; fixed so every run and every checkpoint
/// sees the same feature space.
pub const PHI_FALLBACK_SEED: u64 = 0x5eed_f00d;

const FALLBACK_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];
const FALLBACK_STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

/// Conv/ReLU feature stack with frozen parameters, stored under the
/// `phi.` prefix.
pub struct FeatureExtractor {
    strides: Vec<usize>,
    num_layers: usize,
}

impl FeatureExtractor {
    /// Fixed-seed 5-layer random extractor.
    pub fn random_fallback<E: Element>(in_channels: usize) -> (Self, ParameterStore<E>) {
        let mut init = Initializer::new(PHI_FALLBACK_SEED);
        let mut store = ParameterStore::new();
        let mut in_ch = in_channels;
        for (i, (&out_ch, &stride)) in FALLBACK_CHANNELS
            .iter()
            .zip(FALLBACK_STRIDES.iter())
            .enumerate()
        {
            let shape = [out_ch, in_ch, 3, 3];
            let fan_in = in_ch * 9;
            store.insert(
                format!("phi.conv{i}.weight"),
                init.kaiming_uniform::<E>(&shape, fan_in),
            );
            store.insert(format!("phi.conv{i}.bias"), Tensor::zeros(&[out_ch]));
            let _ = stride;
            in_ch = out_ch;
        }
        store.insert(
            "phi.strides".to_string(),
            Tensor::new(
                &[FALLBACK_STRIDES.len()],
                FALLBACK_STRIDES
                    .iter()
                    .map(|&s| E::from_f64(s as f64))
                    .collect(),
            )
            .expect("sized"),
        );
        let fe = Self {
            strides: FALLBACK_STRIDES.to_vec(),
            num_layers: FALLBACK_CHANNELS.len(),
        };
        (fe, store)
    }

    /// Interpret a store holding `phi.convN.{weight,bias}` entries
    /// (consecutive from 0) and an optional `phi.strides` vector
    /// (default: stride 1 everywhere).
    pub fn from_store<E: Element>(store: &ParameterStore<E>) -> Result<Self, ModelError> {
        let mut num_layers = 0;
        while store.contains(&format!("phi.conv{num_layers}.weight")) {
            num_layers += 1;
        }
        if num_layers == 0 {
            return Err(ModelError::EmptyExtractor);
        }
        let strides = match store.get("phi.strides") {
            Ok(t) => t.data().iter().map(|v| v.to_f64() as usize).collect(),
            Err(_) => vec![1; num_layers],
        };
        Ok(Self {
            strides,
            num_layers,
        })
    }

    pub fn param_specs<E: Element>(&self, store: &ParameterStore<E>) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (name, tensor) in store.iter() {
            if name.starts_with("phi.") {
                specs.push(ParamSpec {
                    name: name.to_string(),
                    shape: tensor.shape().to_vec(),
                    trainable: false,
                });
            }
        }
        specs
    }

    /// `[N, C, H, W]` image batch to its feature representation.
    pub fn forward<E: Element>(
        &self,
        g: &mut Graph<E>,
        p: &Bound,
        x: TensorId,
        _mode: Mode,
    ) -> Result<TensorId, ModelError> {
        let mut h = x;
        for i in 0..self.num_layers {
            let stride = self.strides.get(i).copied().unwrap_or(1);
            let weight = p.get(&format!("phi.conv{i}.weight"))?;
            let pad = g.shape(weight)[2] / 2;
            h = g.conv2d(
                h,
                weight,
                Some(p.get(&format!("phi.conv{i}.bias"))?),
                stride,
                pad,
            )?;
            if i + 1 < self.num_layers {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
