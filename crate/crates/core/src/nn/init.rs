//! Deterministic parameter initialization.
//!
//! Draws are always taken in f64 and converted, so f32 and f64 models built
//! from the same seed have the same initial values up to rounding.

use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded source of initial parameter values.
pub struct InitRng {
    rng: ChaCha8Rng,
}

impl InitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// He (Kaiming) normal: std = sqrt(2 / fan_in).
    pub fn he_normal<F: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<F> {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut out = ArrayD::zeros(IxDyn(shape));
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = F::from_f64(z * std);
        }
        out
    }

    pub fn uniform<F: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> ArrayD<F> {
        let mut out = ArrayD::zeros(IxDyn(shape));
        for v in out.iter_mut() {
            *v = F::from_f64(self.rng.gen_range(lo..hi));
        }
        out
    }
}
