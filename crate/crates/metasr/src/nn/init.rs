//! Seeded parameter initialization.
//!
//! Kaiming-uniform for conv/dense weights (bound `sqrt(6 / fan_in)`), zeros
//! for biases, `gamma=1 / beta=0` for batch-norm affine terms. All draws go
//! through one seeded ChaCha stream in parameter-creation order, so a seed
//! pins the full initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::element::Element;
use super::tensor::Tensor;

pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kaiming_uniform<E: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<E> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| {
            E::from_f64(self.rng.gen_range(-bound..bound))
        })
    }

    pub fn uniform<E: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<E> {
        Tensor::from_fn(shape, |_| E::from_f64(self.rng.gen_range(lo..hi)))
    }
}
