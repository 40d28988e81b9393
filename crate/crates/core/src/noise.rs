//! Seeded Gaussian increment streams.
//!
//! Every trajectory owns one stream. Streams for parallel trials are derived
//! from `(master_seed, index)` so that the schedule never affects the draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent stream under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seeded source of Brownian increments `dW ~ N(0, dt·I_d)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    dim: usize,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn increment(&mut self, dt: f64) -> Vec<f64> {
        let scale = dt.sqrt();
        (0..self.dim)
            .map(|_| scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}
