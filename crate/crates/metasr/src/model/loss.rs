//! Loss functions for adversarial SR training.
//!
//! The generator objective is the weighted sum
//! `l1 + 0.001 * adversarial + 0.006 * perceptual`; the discriminator
//! maximizes `log D(hr) + log(1 - D(sr))`.

use crate::nn::{Bound, Element, Graph, NnError, TensorId};

use super::{FeatureExtractor, Mode, ModelError};

/// Log inputs are clamped to `[LOG_EPS, inf)` so saturated discriminator
/// outputs cannot produce infinities.
pub const LOG_EPS: f64 = 1e-7;

/// Weights of the composite generator loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub adversarial: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            adversarial: 0.001,
            perceptual: 0.006,
        }
    }
}

/// Mean absolute error over every element (batch included).
pub fn l1_loss<E: Element>(
    g: &mut Graph<E>,
    sr: TensorId,
    hr: TensorId,
) -> Result<TensorId, NnError> {
    let diff = g.sub(sr, hr)?;
    let mag = g.abs(diff);
    Ok(g.mean_all(mag))
}

/// `(generator_loss, discriminator_loss)` from discriminator probabilities.
///
/// The discriminator minimizes `-mean[log d_real + log(1 - d_fake)]`; the
/// generator minimizes the non-saturating `-mean[log d_fake]`.
pub fn adversarial_losses<E: Element>(
    g: &mut Graph<E>,
    d_real: TensorId,
    d_fake: TensorId,
) -> Result<(TensorId, TensorId), NnError> {
    let eps = E::from_f64(LOG_EPS);
    let ln_real = g.ln_clamped(d_real, eps);
    let one_minus_fake = g.affine(d_fake, -E::ONE, E::ONE);
    let ln_not_fake = g.ln_clamped(one_minus_fake, eps);
    let sum = g.add(ln_real, ln_not_fake)?;
    let disc_mean = g.mean_all(sum);
    let disc_loss = g.scale(disc_mean, -E::ONE);

    let ln_fake = g.ln_clamped(d_fake, eps);
    let gen_mean = g.mean_all(ln_fake);
    let gen_loss = g.scale(gen_mean, -E::ONE);
    Ok((gen_loss, disc_loss))
}

/// Mean squared distance between the feature representations of `sr` and
/// `hr`. The extractor is frozen: gradients reach `sr` only.
pub fn perceptual_loss<E: Element>(
    g: &mut Graph<E>,
    sr: TensorId,
    hr: TensorId,
    phi: &FeatureExtractor,
    p: &Bound,
) -> Result<TensorId, ModelError> {
    let f_sr = phi.forward(g, p, sr, Mode::Eval)?;
    let f_hr = phi.forward(g, p, hr, Mode::Eval)?;
    let diff = g.sub(f_sr, f_hr)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

/// Components of one generator update, plus the weighted total.
pub struct GeneratorLoss {
    pub l1: TensorId,
    pub adversarial: TensorId,
    pub perceptual: TensorId,
    pub total: TensorId,
}

/// The composite objective the generator trains on.
pub fn total_generator_loss<E: Element>(
    g: &mut Graph<E>,
    sr: TensorId,
    hr: TensorId,
    d_fake: TensorId,
    phi: &FeatureExtractor,
    p: &Bound,
    weights: &LossWeights,
) -> Result<GeneratorLoss, ModelError> {
    let l1 = l1_loss(g, sr, hr)?;
    let eps = E::from_f64(LOG_EPS);
    let ln_fake = g.ln_clamped(d_fake, eps);
    let gen_mean = g.mean_all(ln_fake);
    let adversarial = g.scale(gen_mean, -E::ONE);
    let perceptual = perceptual_loss(g, sr, hr, phi, p)?;

    let t1 = g.scale(l1, E::from_f64(weights.l1));
    let t2 = g.scale(adversarial, E::from_f64(weights.adversarial));
    let t3 = g.scale(perceptual, E::from_f64(weights.perceptual));
    let t12 = g.add(t1, t2)?;
    let total = g.add(t12, t3)?;
    Ok(GeneratorLoss {
        l1,
        adversarial,
        perceptual,
        total,
    })
}
