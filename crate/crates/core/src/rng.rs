//! Seeded random streams.
//!
//! All simulation randomness comes from ChaCha8, a counter-based generator:
//! a `(seed, stream)` pair selects an independent keystream, so replicate `r`
//! of a study always reads stream `r` no matter which thread runs it or in
//! which order replicates finish.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform on the open interval (0, 1): `(k + 0.5) / 2^53` for a 53-bit `k`.
    pub fn uniform_open(&mut self) -> f64 {
        let k = self.inner.next_u64() >> 11;
        (k as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Gamma(shape, rate) draw.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters validated by caller");
        g.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }
}
