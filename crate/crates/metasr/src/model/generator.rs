//! The feature-learning trunk: a 9x9 head convolution with PReLU, a stack of
//! residual blocks, and a post-stack conv + batch-norm joined to the head
//! activation by a long skip connection. Output is a `num_features`-channel
//! map at LR resolution, ready for the meta-upscale stage.

use crate::nn::{Bound, Element, Graph, Initializer, ParameterStore, Tensor, TensorId};

use super::{Mode, ModelError, ParamSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub num_features: usize,
    pub num_res_blocks: usize,
    pub kernel_size: usize,
    pub head_kernel: usize,
    pub in_channels: usize,
}

impl Default for GeneratorConfig {
    /// Defaults chosen so generator + weight predictor land on the published
    /// 0.561M-parameter budget (see `SrModel::count_parameters`).
    fn default() -> Self {
        Self {
            num_features: 64,
            num_res_blocks: 5,
            kernel_size: 3,
            head_kernel: 9,
            in_channels: 1,
        }
    }
}

pub struct Generator {
    cfg: GeneratorConfig,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let f = self.cfg.num_features;
        let k = self.cfg.kernel_size;
        let hk = self.cfg.head_kernel;
        let mut specs = vec![
            ParamSpec {
                name: "generator.head.weight".into(),
                shape: vec![f, self.cfg.in_channels, hk, hk],
                trainable: true,
            },
            ParamSpec {
                name: "generator.head.bias".into(),
                shape: vec![f],
                trainable: true,
            },
            ParamSpec {
                name: "generator.head.prelu".into(),
                shape: vec![1],
                trainable: true,
            },
        ];
        for b in 0..self.cfg.num_res_blocks {
            for conv in ["conv1", "conv2"] {
                specs.push(ParamSpec {
                    name: format!("generator.block{b}.{conv}.weight"),
                    shape: vec![f, f, k, k],
                    trainable: true,
                });
                specs.push(ParamSpec {
                    name: format!("generator.block{b}.{conv}.bias"),
                    shape: vec![f],
                    trainable: true,
                });
            }
            for bn in ["bn1", "bn2"] {
                for (term, trainable) in [
                    ("gamma", true),
                    ("beta", true),
                    ("running_mean", false),
                    ("running_var", false),
                ] {
                    specs.push(ParamSpec {
                        name: format!("generator.block{b}.{bn}.{term}"),
                        shape: vec![f],
                        trainable,
                    });
                }
            }
        }
        specs.push(ParamSpec {
            name: "generator.post.weight".into(),
            shape: vec![f, f, k, k],
            trainable: true,
        });
        specs.push(ParamSpec {
            name: "generator.post.bias".into(),
            shape: vec![f],
            trainable: true,
        });
        for (term, trainable) in [
            ("gamma", true),
            ("beta", true),
            ("running_mean", false),
            ("running_var", false),
        ] {
            specs.push(ParamSpec {
                name: format!("generator.post_bn.{term}"),
                shape: vec![f],
                trainable,
            });
        }
        specs
    }

    /// Trainable scalars in the trunk alone.
    pub fn count_parameters(&self) -> usize {
        self.param_specs()
            .iter()
            .filter(|s| s.trainable)
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn init_into<E: Element>(&self, init: &mut Initializer, store: &mut ParameterStore<E>) {
        for spec in self.param_specs() {
            let t: Tensor<E> = if spec.name.ends_with(".weight") {
                let fan_in: usize = spec.shape[1..].iter().product();
                init.kaiming_uniform(&spec.shape, fan_in)
            } else if spec.name.ends_with(".prelu") {
                Tensor::filled(&spec.shape, E::from_f64(0.25))
            } else if spec.name.ends_with(".gamma") || spec.name.ends_with(".running_var") {
                Tensor::filled(&spec.shape, E::ONE)
            } else {
                // bias, beta, running_mean
                Tensor::zeros(&spec.shape)
            };
            store.insert(spec.name, t);
        }
    }

    /// `[N, in_channels, h, w] -> [N, num_features, h, w]` (same-padded).
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
        let (h, w) = (shape[2], shape[3]);
        if h < self.cfg.head_kernel || w < self.cfg.head_kernel {
            return Err(ModelError::InputTooSmall {
                h,
                w,
                k: self.cfg.head_kernel,
            });
        }

        let head = g.conv2d(
            x,
            p.get("generator.head.weight")?,
            Some(p.get("generator.head.bias")?),
            1,
            self.cfg.head_kernel / 2,
        )?;
        let skip = g.prelu(head, p.get("generator.head.prelu")?)?;

        let pad = self.cfg.kernel_size / 2;
        let mut h_id = skip;
        for b in 0..self.cfg.num_res_blocks {
            let block_in = h_id;
            let c1 = g.conv2d(
                block_in,
                p.get(&format!("generator.block{b}.conv1.weight"))?,
                Some(p.get(&format!("generator.block{b}.conv1.bias"))?),
                1,
                pad,
            )?;
            let n1 = batch_norm(g, p, &format!("generator.block{b}.bn1"), c1, mode)?;
            let a1 = g.relu(n1);
            let c2 = g.conv2d(
                a1,
                p.get(&format!("generator.block{b}.conv2.weight"))?,
                Some(p.get(&format!("generator.block{b}.conv2.bias"))?),
                1,
                pad,
            )?;
            let n2 = batch_norm(g, p, &format!("generator.block{b}.bn2"), c2, mode)?;
            h_id = g.add(block_in, n2)?;
        }

        let post = g.conv2d(
            h_id,
            p.get("generator.post.weight")?,
            Some(p.get("generator.post.bias")?),
            1,
            pad,
        )?;
        let post_bn = batch_norm(g, p, "generator.post_bn", post, mode)?;
        Ok(g.add(skip, post_bn)?)
    }
}

/// Batch-norm layer bound to named store entries; training mode queues
/// running-stat updates on the graph under the entry names.
pub(crate) fn batch_norm<E: Element>(
    g: &mut Graph<E>,
    p: &Bound,
    prefix: &str,
    x: TensorId,
    mode: Mode,
) -> Result<TensorId, ModelError> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    let rm = g.value(p.get(&format!("{prefix}.running_mean"))?).to_vec();
    let rv = g.value(p.get(&format!("{prefix}.running_var"))?).to_vec();
    let (out, updated) = g.batch_norm2d(x, gamma, beta, &rm, &rv, mode == Mode::Train)?;
    if let Some((nm, nv)) = updated {
        g.queue_buffer_update(format!("{prefix}.running_mean"), nm);
        g.queue_buffer_update(format!("{prefix}.running_var"), nv);
    }
    Ok(out)
}
