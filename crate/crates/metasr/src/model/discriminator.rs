//! Strided-convolution discriminator with Leaky ReLU activations, adaptive
//! average pooling, and a sigmoid head producing `P(input is a real HR
//! image)`. The pooling absorbs the variable HR extents produced by
//! different training scales.

use crate::nn::{Bound, Element, Graph, Initializer, ParameterStore, Tensor, TensorId};

use super::{generator::batch_norm, Mode, ModelError, ParamSpec};

/// Channel schedule of the conv stack; strides alternate 1/2.
const CHANNELS: [usize; 8] = [64, 64, 128, 128, 256, 256, 512, 512];
const STRIDES: [usize; 8] = [1, 2, 1, 2, 1, 2, 1, 2];
const LEAKY_SLOPE: f64 = 0.2;
const MIN_EXTENT: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub dense_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            dense_width: 1024,
        }
    }
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Self {
        Self { cfg }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut in_ch = self.cfg.in_channels;
        for (i, (&out_ch, _)) in CHANNELS.iter().zip(STRIDES.iter()).enumerate() {
            specs.push(ParamSpec {
                name: format!("discriminator.conv{i}.weight"),
                shape: vec![out_ch, in_ch, 3, 3],
                trainable: true,
            });
            specs.push(ParamSpec {
                name: format!("discriminator.conv{i}.bias"),
                shape: vec![out_ch],
                trainable: true,
            });
            if i > 0 {
                for (term, trainable) in [
                    ("gamma", true),
                    ("beta", true),
                    ("running_mean", false),
                    ("running_var", false),
                ] {
                    specs.push(ParamSpec {
                        name: format!("discriminator.bn{i}.{term}"),
                        shape: vec![out_ch],
                        trainable,
                    });
                }
            }
            in_ch = out_ch;
        }
        specs.push(ParamSpec {
            name: "discriminator.fc1.weight".into(),
            shape: vec![self.cfg.dense_width, CHANNELS[7]],
            trainable: true,
        });
        specs.push(ParamSpec {
            name: "discriminator.fc1.bias".into(),
            shape: vec![self.cfg.dense_width],
            trainable: true,
        });
        specs.push(ParamSpec {
            name: "discriminator.fc2.weight".into(),
            shape: vec![1, self.cfg.dense_width],
            trainable: true,
        });
        specs.push(ParamSpec {
            name: "discriminator.fc2.bias".into(),
            shape: vec![1],
            trainable: true,
        });
        specs
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.param_specs()
            .into_iter()
            .filter(|s| s.trainable)
            .map(|s| s.name)
            .collect()
    }

    pub fn init_into<E: Element>(&self, init: &mut Initializer, store: &mut ParameterStore<E>) {
        for spec in self.param_specs() {
            let t: Tensor<E> = if spec.name.ends_with(".weight") {
                let fan_in: usize = spec.shape[1..].iter().product();
                init.kaiming_uniform(&spec.shape, fan_in)
            } else if spec.name.ends_with(".gamma") || spec.name.ends_with(".running_var") {
                Tensor::filled(&spec.shape, E::ONE)
            } else {
                Tensor::zeros(&spec.shape)
            };
            store.insert(spec.name, t);
        }
    }

    /// `[N, C, H, W] -> [N, 1]`, each value strictly inside `(0, 1)`.
    pub fn forward<E: Element>(
        &self,
        g: &mut Graph<E>,
        p: &Bound,
        x: TensorId,
        mode: Mode,
    ) -> Result<TensorId, ModelError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return Err(ModelError::WrongChannels {
                expected: self.cfg.in_channels,
                got: if shape.len() == 4 { shape[1] } else { 0 },
            });
        }
        if shape[2] < MIN_EXTENT || shape[3] < MIN_EXTENT {
            return Err(ModelError::DiscriminatorTooSmall {
                min: MIN_EXTENT,
                h: shape[2],
                w: shape[3],
            });
        }
        let slope = E::from_f64(LEAKY_SLOPE);
        let mut h = x;
        for (i, stride) in STRIDES.iter().enumerate() {
            h = g.conv2d(
                h,
                p.get(&format!("discriminator.conv{i}.weight"))?,
                Some(p.get(&format!("discriminator.conv{i}.bias"))?),
                *stride,
                1,
            )?;
            if i > 0 {
                h = batch_norm(g, p, &format!("discriminator.bn{i}"), h, mode)?;
            }
            h = g.leaky_relu(h, slope);
        }
        let pooled = g.global_avg_pool(h)?;
        let d1 = g.dense(
            pooled,
            p.get("discriminator.fc1.weight")?,
            Some(p.get("discriminator.fc1.bias")?),
        )?;
        let a1 = g.leaky_relu(d1, slope);
        let d2 = g.dense(
            a1,
            p.get("discriminator.fc2.weight")?,
            Some(p.get("discriminator.fc2.bias")?),
        )?;
        Ok(g.sigmoid(d2))
    }
}
