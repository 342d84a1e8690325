//! Tape-based reverse-mode autodiff over a recorded computation graph.
//!
//! A [`Graph`] is the per-forward-pass context: leaves are inserted (inputs
//! and parameters), ops append nodes in topological order, and
//! [`Graph::backward`] walks the tape in reverse to populate gradients.
//! Graphs are cheap and rebuilt for every training step.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::conv;
use super::element::Element;
use super::error::NnError;
use super::store::ParameterStore;
use super::tensor::Tensor;

/// Batch-norm variance stabilizer.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: `running = (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// An operation whose backward rule is supplied by the caller.
///
/// This is the escape hatch for domain ops (the meta-upscale weight
/// application uses it) so the core tape stays generic.
pub trait CustomOp<E: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Accumulate input gradients. `in_grads[i]` is `Some` (a zero-filled
    /// buffer of the input's size) exactly when input `i` needs a gradient.
    fn backward(
        &self,
        inputs: &[(&[E], &[usize])],
        out_grad: &[E],
        in_grads: &mut [Option<Vec<E>>],
    );
}

struct BnSaved<E> {
    xhat: Vec<E>,
    inv_std: Vec<E>,
    training: bool,
}

enum Op<E: Element> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Affine { x: TensorId, mul: E },
    Clamp { x: TensorId, lo: E, hi: E },
    Relu(TensorId),
    LeakyRelu(TensorId, E),
    PRelu { x: TensorId, alpha: TensorId },
    Sigmoid(TensorId),
    LnClamped(TensorId, E),
    Abs(TensorId),
    MeanAll(TensorId),
    SumAll(TensorId),
    Reshape(TensorId),
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    },
    Dense {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
    },
    BatchNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        saved: BnSaved<E>,
    },
    GlobalAvgPool(TensorId),
    Custom {
        op: Arc<dyn CustomOp<E>>,
        inputs: Vec<TensorId>,
    },
}

struct Node<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
    grad: Option<Vec<E>>,
    requires_grad: bool,
    op: Op<E>,
}

/// Parameter names resolved to graph leaves by [`Graph::bind`].
pub struct Bound {
    map: BTreeMap<String, TensorId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<TensorId, NnError> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    buffer_updates: Vec<(String, Vec<E>)>,
    backward_done: bool,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            buffer_updates: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<E>, requires_grad: bool, op: Op<E>) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn leaf(&mut self, t: Tensor<E>, requires_grad: bool) -> TensorId {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), requires_grad, Op::Leaf)
    }

    /// Leaf that never takes gradients (inputs, frozen weights).
    pub fn constant(&mut self, t: Tensor<E>) -> TensorId {
        self.leaf(t, false)
    }

    /// Insert every store entry as a leaf; `trainable` decides which leaves
    /// participate in gradients.
    pub fn bind(
        &mut self,
        store: &ParameterStore<E>,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        self.bind_where(store, |_| true, trainable)
    }

    /// [`Graph::bind`] restricted to entries matching `include`.
    pub fn bind_where(
        &mut self,
        store: &ParameterStore<E>,
        include: impl Fn(&str) -> bool,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        let mut map = BTreeMap::new();
        for (name, tensor) in store.iter() {
            if !include(name) {
                continue;
            }
            let id = self.leaf(tensor.clone(), trainable(name));
            map.insert(name.to_string(), id);
        }
        Bound { map }
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[E] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a rank-0 (or single-element) node.
    pub fn scalar_value(&self, id: TensorId) -> E {
        self.nodes[id.0].data[0]
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor<E> {
        Tensor::new(&self.nodes[id.0].shape, self.nodes[id.0].data.clone())
            .expect("node data length matches shape")
    }

    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn queue_buffer_update(&mut self, name: impl Into<String>, data: Vec<E>) {
        self.buffer_updates.push((name.into(), data));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Vec<E>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Gradients for `names`, in order; errors if one is absent.
    pub fn collect_grads(
        &self,
        bound: &Bound,
        names: &[String],
    ) -> Result<Vec<(String, Vec<E>)>, NnError> {
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let id = bound.get(name)?;
            let g = self.nodes[id.0]
                .grad
                .clone()
                .ok_or_else(|| NnError::MissingGradient(name.clone()))?;
            out.push((name.clone(), g));
        }
        Ok(out)
    }

    // ---- elementwise and reduction ops ----

    fn check_same_shape(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<(), NnError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NnError::ShapeMismatch {
                op,
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.check_same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.check_same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        self.check_same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Mul(a, b)))
    }

    /// `y = mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: TensorId, mul: E, add: E) -> TensorId {
        let data = self.nodes[x.0].data.iter().map(|&v| mul * v + add).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: TensorId, k: E) -> TensorId {
        self.affine(x, k, E::ZERO)
    }

    pub fn clamp(&mut self, x: TensorId, lo: E, hi: E) -> TensorId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| v.max(lo).min(hi))
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Clamp { x, lo, hi })
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data = self.nodes[x.0].data.iter().map(|&v| v.max(E::ZERO)).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: E) -> TensorId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > E::ZERO { v } else { slope * v })
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::LeakyRelu(x, slope))
    }

    /// Parametric ReLU with a learnable scalar slope (`alpha` has one value).
    pub fn prelu(&mut self, x: TensorId, alpha: TensorId) -> Result<TensorId, NnError> {
        if self.nodes[alpha.0].data.len() != 1 {
            return Err(NnError::BadRank {
                op: "prelu(alpha)",
                expected: 0,
                shape: self.nodes[alpha.0].shape.clone(),
            });
        }
        let a = self.nodes[alpha.0].data[0];
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > E::ZERO { v } else { a * v })
            .collect();
        let rg = self.any_requires_grad(&[x, alpha]);
        Ok(self.push(self.nodes[x.0].shape.clone(), data, rg, Op::PRelu { x, alpha }))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| E::ONE / (E::ONE + (-v).exp()))
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Sigmoid(x))
    }

    /// `ln(max(x, eps))`; the clamp keeps saturated probabilities finite.
    pub fn ln_clamped(&mut self, x: TensorId, eps: E) -> TensorId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| v.max(eps).ln())
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::LnClamped(x, eps))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let data = self.nodes[x.0].data.iter().map(|&v| v.abs()).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Abs(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].data.len();
        let sum: E = self.nodes[x.0].data.iter().copied().sum();
        let mean = sum / E::from_f64(n as f64);
        let rg = self.nodes[x.0].requires_grad;
        self.push(Vec::new(), vec![mean], rg, Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let sum: E = self.nodes[x.0].data.iter().copied().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Vec::new(), vec![sum], rg, Op::SumAll(x))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId, NnError> {
        let expected: usize = shape.iter().product();
        if expected != self.nodes[x.0].data.len() {
            return Err(NnError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: self.nodes[x.0].data.len(),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape(x)))
    }

    // ---- layers ----

    /// 2D convolution, NCHW input, OIHW weight, square odd kernel.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, NnError> {
        let ishape = self.nodes[input.0].shape.clone();
        let wshape = self.nodes[weight.0].shape.clone();
        if ishape.len() != 4 {
            return Err(NnError::BadRank {
                op: "conv2d(input)",
                expected: 4,
                shape: ishape,
            });
        }
        if wshape.len() != 4 || wshape[2] != wshape[3] {
            return Err(NnError::BadRank {
                op: "conv2d(weight)",
                expected: 4,
                shape: wshape,
            });
        }
        let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (o, wc, k) = (wshape[0], wshape[1], wshape[2]);
        if k % 2 == 0 {
            return Err(NnError::EvenKernel(k));
        }
        if c != wc {
            return Err(NnError::ChannelMismatch {
                input_channels: c,
                weight_channels: wc,
                input_shape: ishape,
                weight_shape: wshape,
            });
        }
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [o] {
                return Err(NnError::ShapeMismatch {
                    op: "conv2d(bias)",
                    left: self.nodes[b.0].shape.clone(),
                    right: vec![o],
                });
            }
        }
        let (oh, ow) = match (
            conv::out_extent(h, k, stride, padding),
            conv::out_extent(w, k, stride, padding),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(NnError::EmptyConvOutput {
                    input: ishape,
                    kernel: k,
                    stride,
                    padding,
                })
            }
        };

        let out = conv::forward(
            &self.nodes[input.0].data,
            n,
            c,
            h,
            w,
            &self.nodes[weight.0].data,
            o,
            k,
            bias.map(|b| self.nodes[b.0].data.as_slice()),
            stride,
            padding,
            oh,
            ow,
        );
        let mut ids = vec![input, weight];
        if let Some(b) = bias {
            ids.push(b);
        }
        let rg = self.any_requires_grad(&ids);
        Ok(self.push(
            vec![n, o, oh, ow],
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Fully connected layer: `out[n,g] = sum_f input[n,f] * weight[g,f] + bias[g]`.
    pub fn dense(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
    ) -> Result<TensorId, NnError> {
        let ishape = self.nodes[input.0].shape.clone();
        let wshape = self.nodes[weight.0].shape.clone();
        if ishape.len() != 2 {
            return Err(NnError::BadRank {
                op: "dense(input)",
                expected: 2,
                shape: ishape,
            });
        }
        if wshape.len() != 2 {
            return Err(NnError::BadRank {
                op: "dense(weight)",
                expected: 2,
                shape: wshape,
            });
        }
        let (n, f) = (ishape[0], ishape[1]);
        let (g, wf) = (wshape[0], wshape[1]);
        if f != wf {
            return Err(NnError::ShapeMismatch {
                op: "dense",
                left: ishape,
                right: wshape,
            });
        }
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [g] {
                return Err(NnError::ShapeMismatch {
                    op: "dense(bias)",
                    left: self.nodes[b.0].shape.clone(),
                    right: vec![g],
                });
            }
        }
        let mut out = vec![E::ZERO; n * g];
        // out[N,G] = input[N,F] . weight[G,F]^T
        conv::gemm_rowpar(
            n,
            f,
            g,
            &self.nodes[input.0].data,
            f as isize,
            1,
            &self.nodes[weight.0].data,
            1,
            f as isize,
            &mut out,
        );
        if let Some(b) = bias {
            let bdata = &self.nodes[b.0].data;
            for row in out.chunks_exact_mut(g) {
                for (v, &bv) in row.iter_mut().zip(bdata.iter()) {
                    *v += bv;
                }
            }
        }
        let mut ids = vec![input, weight];
        if let Some(b) = bias {
            ids.push(b);
        }
        let rg = self.any_requires_grad(&ids);
        Ok(self.push(vec![n, g], out, rg, Op::Dense { input, weight, bias }))
    }

    /// Batch normalization over `(N, H, W)` per channel.
    ///
    /// Training mode normalizes with batch statistics and returns updated
    /// running stats (callers persist them); eval mode normalizes with the
    /// provided running stats and returns `None`.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm2d(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &[E],
        running_var: &[E],
        training: bool,
    ) -> Result<(TensorId, Option<(Vec<E>, Vec<E>)>), NnError> {
        let ishape = self.nodes[input.0].shape.clone();
        if ishape.len() != 4 {
            return Err(NnError::BadRank {
                op: "batch_norm2d(input)",
                expected: 4,
                shape: ishape,
            });
        }
        let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[id.0].shape != [c] {
                return Err(NnError::ShapeMismatch {
                    op: match name {
                        "gamma" => "batch_norm2d(gamma)",
                        _ => "batch_norm2d(beta)",
                    },
                    left: self.nodes[id.0].shape.clone(),
                    right: vec![c],
                });
            }
        }
        let per_channel = n * h * w;
        if training && per_channel < 2 {
            return Err(NnError::DegenerateBatch(per_channel));
        }
        let eps = E::from_f64(BN_EPS);
        let x = &self.nodes[input.0].data;
        let plane = h * w;

        let (mean, var): (Vec<E>, Vec<E>) = if training {
            let mut mean = vec![E::ZERO; c];
            let mut var = vec![E::ZERO; c];
            let count = E::from_f64(per_channel as f64);
            for ch in 0..c {
                let mut s = E::ZERO;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for &v in &x[base..base + plane] {
                        s += v;
                    }
                }
                let m = s / count;
                let mut sq = E::ZERO;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for &v in &x[base..base + plane] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / count;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
        let gdata = self.nodes[gamma.0].data.clone();
        let bdata = self.nodes[beta.0].data.clone();
        let mut xhat = vec![E::ZERO; x.len()];
        let mut out = vec![E::ZERO; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let (m, is, g, be) = (mean[ch], inv_std[ch], gdata[ch], bdata[ch]);
                for i in base..base + plane {
                    let xh = (x[i] - m) * is;
                    xhat[i] = xh;
                    out[i] = g * xh + be;
                }
            }
        }

        let new_running = if training {
            // Unbiased variance for the running estimate.
            let bessel = E::from_f64(per_channel as f64 / (per_channel as f64 - 1.0));
            let mom = E::from_f64(BN_MOMENTUM);
            let keep = E::ONE - mom;
            let nm: Vec<E> = running_mean
                .iter()
                .zip(&mean)
                .map(|(&r, &b)| keep * r + mom * b)
                .collect();
            let nv: Vec<E> = running_var
                .iter()
                .zip(&var)
                .map(|(&r, &b)| keep * r + mom * b * bessel)
                .collect();
            Some((nm, nv))
        } else {
            None
        };

        let rg = self.any_requires_grad(&[input, gamma, beta]);
        let id = self.push(
            ishape,
            out,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved: BnSaved {
                    xhat,
                    inv_std,
                    training,
                },
            },
        );
        Ok((id, new_running))
    }

    /// Adaptive average pooling to 1x1: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId, NnError> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 4 {
            return Err(NnError::BadRank {
                op: "global_avg_pool",
                expected: 4,
                shape,
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let count = E::from_f64(plane as f64);
        let data = &self.nodes[x.0].data;
        let mut out = vec![E::ZERO; n * c];
        for (idx, o) in out.iter_mut().enumerate() {
            let base = idx * plane;
            let mut s = E::ZERO;
            for &v in &data[base..base + plane] {
                s += v;
            }
            *o = s / count;
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(vec![n, c], out, rg, Op::GlobalAvgPool(x)))
    }

    /// Record a caller-defined op with a caller-computed output.
    pub fn custom(
        &mut self,
        op: Arc<dyn CustomOp<E>>,
        inputs: &[TensorId],
        out: Tensor<E>,
    ) -> TensorId {
        let rg = self.any_requires_grad(inputs);
        let shape = out.shape().to_vec();
        self.push(
            shape,
            out.into_data(),
            rg,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
        )
    }

    // ---- backward ----

    /// Populate gradients of every `requires_grad` node reachable from `loss`.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), NnError> {
        if self.backward_done {
            return Err(NnError::BackwardConsumed);
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(NnError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![E::ONE]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.clone().expect("checked above");
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            propagate(before, node, &grad);
        }
        Ok(())
    }
}

/// Add `contribution` into the gradient buffer of `id` (must precede the
/// current node on the tape). No-op when the target does not require grad.
fn add_grad<E: Element>(before: &mut [Node<E>], id: TensorId, contribution: &[E]) {
    let target = &mut before[id.0];
    if !target.requires_grad {
        return;
    }
    let buf = target
        .grad
        .get_or_insert_with(|| vec![E::ZERO; target.data.len()]);
    for (g, &c) in buf.iter_mut().zip(contribution) {
        *g += c;
    }
}

fn requires<E: Element>(before: &[Node<E>], id: TensorId) -> bool {
    before[id.0].requires_grad
}

fn propagate<E: Element>(before: &mut [Node<E>], node: &mut Node<E>, grad: &[E]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_grad(before, *a, grad);
            add_grad(before, *b, grad);
        }
        Op::Sub(a, b) => {
            add_grad(before, *a, grad);
            if requires(before, *b) {
                let neg: Vec<E> = grad.iter().map(|&g| -g).collect();
                add_grad(before, *b, &neg);
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if requires(before, a) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[b.0].data)
                    .map(|(&g, &bv)| g * bv)
                    .collect();
                add_grad(before, a, &contrib);
            }
            if requires(before, b) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[a.0].data)
                    .map(|(&g, &av)| g * av)
                    .collect();
                add_grad(before, b, &contrib);
            }
        }
        Op::Affine { x, mul } => {
            if requires(before, *x) {
                let m = *mul;
                let contrib: Vec<E> = grad.iter().map(|&g| g * m).collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::Clamp { x, lo, hi } => {
            if requires(before, *x) {
                let (lo, hi) = (*lo, *hi);
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| if v >= lo && v <= hi { g } else { E::ZERO })
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::Relu(x) => {
            if requires(before, *x) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| if v > E::ZERO { g } else { E::ZERO })
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::LeakyRelu(x, slope) => {
            if requires(before, *x) {
                let s = *slope;
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| if v > E::ZERO { g } else { s * g })
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::PRelu { x, alpha } => {
            let (x, alpha) = (*x, *alpha);
            let a = before[alpha.0].data[0];
            if requires(before, x) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| if v > E::ZERO { g } else { a * g })
                    .collect();
                add_grad(before, x, &contrib);
            }
            if requires(before, alpha) {
                let mut da = E::ZERO;
                for (&g, &v) in grad.iter().zip(&before[x.0].data) {
                    if v <= E::ZERO {
                        da += g * v;
                    }
                }
                add_grad(before, alpha, &[da]);
            }
        }
        Op::Sigmoid(x) => {
            if requires(before, *x) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&node.data)
                    .map(|(&g, &y)| g * y * (E::ONE - y))
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::LnClamped(x, eps) => {
            if requires(before, *x) {
                let eps = *eps;
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| if v > eps { g / v } else { E::ZERO })
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::Abs(x) => {
            if requires(before, *x) {
                let contrib: Vec<E> = grad
                    .iter()
                    .zip(&before[x.0].data)
                    .map(|(&g, &v)| {
                        if v > E::ZERO {
                            g
                        } else if v < E::ZERO {
                            -g
                        } else {
                            E::ZERO
                        }
                    })
                    .collect();
                add_grad(before, *x, &contrib);
            }
        }
        Op::MeanAll(x) => {
            if requires(before, *x) {
                let n = before[x.0].data.len();
                let g = grad[0] / E::from_f64(n as f64);
                let contrib = vec![g; n];
                add_grad(before, *x, &contrib);
            }
        }
        Op::SumAll(x) => {
            if requires(before, *x) {
                let n = before[x.0].data.len();
                let contrib = vec![grad[0]; n];
                add_grad(before, *x, &contrib);
            }
        }
        Op::Reshape(x) => {
            add_grad(before, *x, grad);
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (input, weight, bias) = (*input, *weight, *bias);
            let ishape = before[input.0].shape.clone();
            let wshape = before[weight.0].shape.clone();
            let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
            let (o, k) = (wshape[0], wshape[2]);
            let oh = node.shape[2];
            let ow = node.shape[3];
            let grads = conv::backward(
                &before[input.0].data,
                n,
                c,
                h,
                w,
                &before[weight.0].data,
                o,
                k,
                *stride,
                *padding,
                oh,
                ow,
                grad,
                requires(before, input),
                requires(before, weight),
                bias.map(|b| requires(before, b)).unwrap_or(false),
            );
            if let Some(gi) = grads.input {
                add_grad(before, input, &gi);
            }
            if let Some(gw) = grads.weight {
                add_grad(before, weight, &gw);
            }
            if let (Some(b), Some(gb)) = (bias, grads.bias) {
                add_grad(before, b, &gb);
            }
        }
        Op::Dense {
            input,
            weight,
            bias,
        } => {
            let (input, weight, bias) = (*input, *weight, *bias);
            let (n, f) = {
                let s = &before[input.0].shape;
                (s[0], s[1])
            };
            let g_out = node.shape[1];
            if requires(before, input) {
                // gI[N,F] = grad[N,G] . weight[G,F]
                let mut gi = vec![E::ZERO; n * f];
                conv::gemm_rowpar(
                    n,
                    g_out,
                    f,
                    grad,
                    g_out as isize,
                    1,
                    &before[weight.0].data,
                    f as isize,
                    1,
                    &mut gi,
                );
                add_grad(before, input, &gi);
            }
            if requires(before, weight) {
                // gW[G,F] = grad^T[G,N] . input[N,F]
                let mut gw = vec![E::ZERO; g_out * f];
                conv::gemm_rowpar(
                    g_out,
                    n,
                    f,
                    grad,
                    1,
                    g_out as isize,
                    &before[input.0].data,
                    f as isize,
                    1,
                    &mut gw,
                );
                add_grad(before, weight, &gw);
            }
            if let Some(b) = bias {
                if requires(before, b) {
                    let mut gb = vec![E::ZERO; g_out];
                    for row in grad.chunks_exact(g_out) {
                        for (acc, &g) in gb.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    add_grad(before, b, &gb);
                }
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            saved,
        } => {
            let (input, gamma, beta) = (*input, *gamma, *beta);
            let shape = node.shape.clone();
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let plane = h * w;
            let per_channel = n * plane;
            let count = E::from_f64(per_channel as f64);
            let gdata = before[gamma.0].data.clone();

            if requires(before, gamma) {
                let mut dg = vec![E::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let mut s = E::ZERO;
                        for i in base..base + plane {
                            s += grad[i] * saved.xhat[i];
                        }
                        dg[ch] += s;
                    }
                }
                add_grad(before, gamma, &dg);
            }
            if requires(before, beta) {
                let mut db = vec![E::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let mut s = E::ZERO;
                        for i in base..base + plane {
                            s += grad[i];
                        }
                        db[ch] += s;
                    }
                }
                add_grad(before, beta, &db);
            }
            if requires(before, input) {
                let mut gi = vec![E::ZERO; grad.len()];
                if saved.training {
                    // dx = gamma * inv_std / m * (m*g - sum(g) - xhat * sum(g*xhat))
                    for ch in 0..c {
                        let mut sum_g = E::ZERO;
                        let mut sum_gx = E::ZERO;
                        for b in 0..n {
                            let base = (b * c + ch) * plane;
                            for i in base..base + plane {
                                sum_g += grad[i];
                                sum_gx += grad[i] * saved.xhat[i];
                            }
                        }
                        let coef = gdata[ch] * saved.inv_std[ch] / count;
                        for b in 0..n {
                            let base = (b * c + ch) * plane;
                            for i in base..base + plane {
                                gi[i] = coef
                                    * (count * grad[i] - sum_g - saved.xhat[i] * sum_gx);
                            }
                        }
                    }
                } else {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            let coef = gdata[ch] * saved.inv_std[ch];
                            for i in base..base + plane {
                                gi[i] = coef * grad[i];
                            }
                        }
                    }
                }
                add_grad(before, input, &gi);
            }
        }
        Op::GlobalAvgPool(x) => {
            if requires(before, *x) {
                let shape = &before[x.0].shape;
                let plane = shape[2] * shape[3];
                let scale = E::ONE / E::from_f64(plane as f64);
                let mut gi = vec![E::ZERO; before[x.0].data.len()];
                for (idx, &g) in grad.iter().enumerate() {
                    let v = g * scale;
                    for slot in &mut gi[idx * plane..(idx + 1) * plane] {
                        *slot = v;
                    }
                }
                add_grad(before, *x, &gi);
            }
        }
        Op::Custom { op, inputs } => {
            let op = Arc::clone(op);
            let inputs = inputs.clone();
            let mut in_grads: Vec<Option<Vec<E>>> = inputs
                .iter()
                .map(|id| {
                    if requires(before, *id) {
                        Some(vec![E::ZERO; before[id.0].data.len()])
                    } else {
                        None
                    }
                })
                .collect();
            {
                let in_data: Vec<(&[E], &[usize])> = inputs
                    .iter()
                    .map(|id| {
                        (
                            before[id.0].data.as_slice(),
                            before[id.0].shape.as_slice(),
                        )
                    })
                    .collect();
                op.backward(&in_data, grad, &mut in_grads);
            }
            for (id, maybe) in inputs.iter().zip(in_grads) {
                if let Some(buf) = maybe {
                    add_grad(before, *id, &buf);
                }
            }
        }
    }
}
