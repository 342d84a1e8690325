//! The meta-upscale stage.
//!
//! Every HR pixel is projected onto LR coordinates; a three-layer dense
//! network maps its (fractional offset, inverse scale) description to a
//! filter-weight vector; the weights are applied as an inner product with
//! the 3x3 LR feature patch under the pixel. Because the weights are
//! *predicted from the scale* rather than stored per scale, one parameter
//! set serves every upscaling factor, integer or not.

use std::sync::Arc;

use rayon::prelude::*;

use crate::image::ScaleFactor;
use crate::nn::{Bound, CustomOp, Element, Graph, Initializer, ParameterStore, Tensor, TensorId};

use super::{ModelError, ParamSpec};

/// Side of the feature patch each pixel's weights contract with.
pub const META_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct UpscaleConfig {
    /// Channels of the incoming feature map (the generator's `num_features`).
    pub in_features: usize,
    /// Hidden width of the weight-prediction network.
    pub wpn_hidden: usize,
    /// Channels of the produced image (1 for grayscale, 3 for RGB).
    pub out_channels: usize,
}

impl Default for UpscaleConfig {
    fn default() -> Self {
        Self {
            in_features: 64,
            wpn_hidden: 191,
            out_channels: 1,
        }
    }
}

impl UpscaleConfig {
    /// Length of one predicted weight vector:
    /// `out_channels * in_features * 3 * 3`.
    pub fn weight_cols(&self) -> usize {
        self.out_channels * self.in_features * META_KERNEL * META_KERNEL
    }
}

/// Where one HR pixel lands on the LR grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelProjection {
    /// HR pixel `(row, col)`.
    pub hr: (usize, usize),
    /// `(floor(row / r), floor(col / r))` on the LR grid.
    pub lr: (usize, usize),
    /// Fractional remainder of the projection, each component in `[0, 1)`.
    pub offset: (f64, f64),
    /// `1 / r`.
    pub inv_scale: f64,
}

/// Project every pixel of an `hr_h x hr_w` image onto LR coordinates, in
/// row-major order. Errors for `r < 1`: this module only upscales.
pub fn project(
    hr_h: usize,
    hr_w: usize,
    r: ScaleFactor,
) -> Result<Vec<PixelProjection>, ModelError> {
    if r.get() < 1.0 {
        return Err(ModelError::ScaleBelowOne(r.get()));
    }
    let inv = 1.0 / r.get();
    let mut out = Vec::with_capacity(hr_h * hr_w);
    for i in 0..hr_h {
        let y = i as f64 / r.get();
        let ly = y.floor();
        for j in 0..hr_w {
            let x = j as f64 / r.get();
            let lx = x.floor();
            out.push(PixelProjection {
                hr: (i, j),
                lr: (ly as usize, lx as usize),
                offset: (y - ly, x - lx),
                inv_scale: inv,
            });
        }
    }
    Ok(out)
}

/// Three dense layers (3 -> hidden -> hidden -> weight_cols) with ReLU
/// between: `W = f_theta(offset_y, offset_x, 1/r)` per HR pixel.
pub struct WeightPredictionNet {
    cfg: UpscaleConfig,
}

impl WeightPredictionNet {
    pub fn new(cfg: UpscaleConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &UpscaleConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let h = self.cfg.wpn_hidden;
        let out = self.cfg.weight_cols();
        let dims = [(h, 3usize), (h, h), (out, h)];
        let mut specs = Vec::new();
        for (i, (rows, cols)) in dims.into_iter().enumerate() {
            specs.push(ParamSpec {
                name: format!("meta_upscale.fc{}.weight", i + 1),
                shape: vec![rows, cols],
                trainable: true,
            });
            specs.push(ParamSpec {
                name: format!("meta_upscale.fc{}.bias", i + 1),
                shape: vec![rows],
                trainable: true,
            });
        }
        specs
    }

    pub fn count_parameters(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }

    pub fn init_into<E: Element>(&self, init: &mut Initializer, store: &mut ParameterStore<E>) {
        // The last layer's outputs are consumed as convolution weights over a
        // features x 3 x 3 patch, so its effective fan-in compounds with that
        // contraction; plain per-layer scaling saturates the pixel clamp.
        let patch = self.cfg.in_features * META_KERNEL * META_KERNEL;
        for spec in self.param_specs() {
            let t: Tensor<E> = if spec.name.ends_with(".weight") {
                let fan_in = if spec.name.contains("fc3") {
                    spec.shape[1] * patch
                } else {
                    spec.shape[1]
                };
                init.kaiming_uniform(&spec.shape, fan_in)
            } else {
                Tensor::zeros(&spec.shape)
            };
            store.insert(spec.name, t);
        }
    }
}

/// Run the weight predictor on every projection in one batched pass.
/// Output: `[H*W, out_channels * in_features * kernel^2]`.
pub fn predict_weights<E: Element>(
    g: &mut Graph<E>,
    p: &Bound,
    cfg: &UpscaleConfig,
    projections: &[PixelProjection],
) -> Result<TensorId, ModelError> {
    let rows = projections.len();
    let mut input = Vec::with_capacity(rows * 3);
    for proj in projections {
        input.push(E::from_f64(proj.offset.0));
        input.push(E::from_f64(proj.offset.1));
        input.push(E::from_f64(proj.inv_scale));
    }
    let fc3_rows = g.shape(p.get("meta_upscale.fc3.weight")?)[0];
    if fc3_rows != cfg.weight_cols() {
        return Err(ModelError::WeightCols {
            cols: fc3_rows,
            expected: cfg.weight_cols(),
        });
    }
    let x = g.constant(Tensor::new(&[rows, 3], input).expect("sized above"));
    let h1 = g.dense(
        x,
        p.get("meta_upscale.fc1.weight")?,
        Some(p.get("meta_upscale.fc1.bias")?),
    )?;
    let a1 = g.relu(h1);
    let h2 = g.dense(
        a1,
        p.get("meta_upscale.fc2.weight")?,
        Some(p.get("meta_upscale.fc2.bias")?),
    )?;
    let a2 = g.relu(h2);
    Ok(g.dense(
        a2,
        p.get("meta_upscale.fc3.weight")?,
        Some(p.get("meta_upscale.fc3.bias")?),
    )?)
}

struct MetaApplyOp {
    centers: Arc<Vec<(usize, usize)>>,
    hr_h: usize,
    hr_w: usize,
    out_channels: usize,
    kernel: usize,
}

impl MetaApplyOp {
    /// Clamped feature indices of the `kernel x kernel` patch around `(cy, cx)`.
    fn patch_indices(&self, cy: usize, cx: usize, h: usize, w: usize, idx: &mut [usize]) {
        let k = self.kernel as isize;
        let half = k / 2;
        let mut slot = 0;
        for dy in -half..=half {
            let yy = (cy as isize + dy).clamp(0, h as isize - 1) as usize;
            for dx in -half..=half {
                let xx = (cx as isize + dx).clamp(0, w as isize - 1) as usize;
                idx[slot] = yy * w + xx;
                slot += 1;
            }
        }
    }
}

impl<E: Element> CustomOp<E> for MetaApplyOp {
    fn name(&self) -> &'static str {
        "meta_apply"
    }

    fn backward(
        &self,
        inputs: &[(&[E], &[usize])],
        out_grad: &[E],
        in_grads: &mut [Option<Vec<E>>],
    ) {
        let (feat, fshape) = inputs[0];
        let (weights, wshape) = inputs[1];
        let (n, c, h, w) = (fshape[0], fshape[1], fshape[2], fshape[3]);
        let cols = wshape[1];
        let kk = self.kernel * self.kernel;
        let pixels = self.hr_h * self.hr_w;
        let plane = h * w;
        let feat_plane = c * plane;
        let out_plane = self.out_channels * pixels;

        let (w_grad_opt, rest) = in_grads.split_at_mut(1);
        let feat_grad = &mut w_grad_opt[0];
        let weight_grad = &mut rest[0];

        // d/dW: rows are per-pixel, so pixel chunks are independent.
        if let Some(gw) = weight_grad.as_mut() {
            gw.par_chunks_mut(cols).enumerate().for_each(|(pix, grow)| {
                let (cy, cx) = self.centers[pix];
                let mut idx = vec![0usize; kk];
                self.patch_indices(cy, cx, h, w, &mut idx);
                for s in 0..n {
                    let fbase = s * feat_plane;
                    for oc in 0..self.out_channels {
                        let go = out_grad[s * out_plane + oc * pixels + pix];
                        if go == E::ZERO {
                            continue;
                        }
                        for ch in 0..c {
                            let cbase = fbase + ch * plane;
                            let wbase = (oc * c + ch) * kk;
                            for (t, &fi) in idx.iter().enumerate() {
                                grow[wbase + t] += go * feat[cbase + fi];
                            }
                        }
                    }
                }
            });
        }

        // d/dfeatures: samples are independent.
        if let Some(gf) = feat_grad.as_mut() {
            gf.par_chunks_mut(feat_plane).enumerate().for_each(|(s, gslice)| {
                let mut idx = vec![0usize; kk];
                for pix in 0..pixels {
                    let (cy, cx) = self.centers[pix];
                    self.patch_indices(cy, cx, h, w, &mut idx);
                    let wrow = &weights[pix * cols..(pix + 1) * cols];
                    for oc in 0..self.out_channels {
                        let go = out_grad[s * out_plane + oc * pixels + pix];
                        if go == E::ZERO {
                            continue;
                        }
                        for ch in 0..c {
                            let cbase = ch * plane;
                            let wbase = (oc * c + ch) * kk;
                            for (t, &fi) in idx.iter().enumerate() {
                                gslice[cbase + fi] += go * wrow[wbase + t];
                            }
                        }
                    }
                }
            });
        }
    }
}

/// Contract predicted weights with the LR feature map.
///
/// For each HR pixel, the `kernel x kernel x in_features` feature patch
/// centered at its projected LR position (edge-clamped) is dotted with that
/// pixel's weight vector, once per output channel:
/// `[N, C, h, w] x [H*W, out_channels*C*k*k] -> [N, out_channels, H, W]`.
pub fn apply<E: Element>(
    g: &mut Graph<E>,
    features: TensorId,
    weights: TensorId,
    projections: &[PixelProjection],
    hr_h: usize,
    hr_w: usize,
    out_channels: usize,
) -> Result<TensorId, ModelError> {
    let fshape = g.shape(features).to_vec();
    let wshape = g.shape(weights).to_vec();
    let (n, c, h, w) = (fshape[0], fshape[1], fshape[2], fshape[3]);
    let pixels = hr_h * hr_w;
    if wshape[0] != pixels || projections.len() != pixels {
        return Err(ModelError::WeightRows {
            rows: wshape[0],
            expected: pixels,
            h: hr_h,
            w: hr_w,
        });
    }
    let kernel = META_KERNEL;
    let kk = kernel * kernel;
    let cols = out_channels * c * kk;
    if wshape[1] != cols {
        return Err(ModelError::WeightCols {
            cols: wshape[1],
            expected: cols,
        });
    }

    // Projected centers, clamped into the feature map.
    let centers: Arc<Vec<(usize, usize)>> = Arc::new(
        projections
            .iter()
            .map(|p| (p.lr.0.min(h - 1), p.lr.1.min(w - 1)))
            .collect(),
    );
    let op = MetaApplyOp {
        centers: Arc::clone(&centers),
        hr_h,
        hr_w,
        out_channels,
        kernel,
    };

    let feat = g.value(features);
    let wdata = g.value(weights);
    let plane = h * w;
    let feat_plane = c * plane;
    let out_plane = out_channels * pixels;
    let mut out = vec![E::ZERO; n * out_plane];
    // Forward: samples write disjoint output chunks.
    let feat_ref = &feat;
    let wdata_ref = &wdata;
    let centers_ref = &centers;
    out.par_chunks_mut(out_plane).enumerate().for_each(|(s, oslice)| {
        let fbase = s * feat_plane;
        let mut idx = [0usize; 9];
        for pix in 0..pixels {
            let (cy, cx) = centers_ref[pix];
            let half = 1isize;
            let mut slot = 0;
            for dy in -half..=half {
                let yy = (cy as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -half..=half {
                    let xx = (cx as isize + dx).clamp(0, w as isize - 1) as usize;
                    idx[slot] = yy * w + xx;
                    slot += 1;
                }
            }
            let wrow = &wdata_ref[pix * cols..(pix + 1) * cols];
            for oc in 0..out_channels {
                let mut acc = E::ZERO;
                for ch in 0..c {
                    let cbase = fbase + ch * plane;
                    let wbase = (oc * c + ch) * kk;
                    for (t, &fi) in idx.iter().enumerate() {
                        acc += feat_ref[cbase + fi] * wrow[wbase + t];
                    }
                }
                oslice[oc * pixels + pix] = acc;
            }
        }
    });

    let out_tensor =
        Tensor::new(&[n, out_channels, hr_h, hr_w], out).expect("sized above");
    Ok(g.custom(Arc::new(op), &[features, weights], out_tensor))
}

/// Full meta-upscale: project -> predict weights -> apply.
///
/// Output extents are `(floor(r*h), floor(r*w))` for any `r >= 1`.
pub fn upscale<E: Element>(
    g: &mut Graph<E>,
    p: &Bound,
    cfg: &UpscaleConfig,
    features: TensorId,
    r: ScaleFactor,
) -> Result<TensorId, ModelError> {
    let fshape = g.shape(features).to_vec();
    let (h, w) = (fshape[2], fshape[3]);
    let hr_h = r.scaled_extent(h);
    let hr_w = r.scaled_extent(w);
    let projections = project(hr_h, hr_w, r)?;
    let weights = predict_weights(g, p, cfg, &projections)?;
    apply(g, features, weights, &projections, hr_h, hr_w, cfg.out_channels)
}
