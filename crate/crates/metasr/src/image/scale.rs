use rand::Rng;

use super::ImageError;

/// Upscaling ratio `r >= 1`. Training draws from [`training_scales`];
/// inference accepts any value (beyond 4.0 without an accuracy contract).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub fn new(r: f64) -> Result<Self, ImageError> {
        if !r.is_finite() || r < 1.0 {
            return Err(ImageError::BadScale(r));
        }
        Ok(Self(r))
    }

    /// The canonical training value `tenths / 10`.
    pub fn from_tenths(tenths: u32) -> Self {
        Self(tenths as f64 / 10.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `floor(r * n)`: the HR extent produced from an LR extent of `n`.
    ///
    /// This one definition is used everywhere extents are derived, so the
    /// pipeline, the upscaler, and the CLI always agree.
    pub fn scaled_extent(self, n: usize) -> usize {
        (self.0 * n as f64).floor() as usize
    }
}

impl std::fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The 30 training scales: 1.1 to 4.0 in 0.1 increments.
pub fn training_scales() -> [ScaleFactor; 30] {
    std::array::from_fn(|i| ScaleFactor::from_tenths(11 + i as u32))
}

/// Draw one of the 30 training scales uniformly at random.
pub fn sample_scale(rng: &mut impl Rng) -> ScaleFactor {
    let idx = rng.gen_range(0..30u32);
    ScaleFactor::from_tenths(11 + idx)
}
