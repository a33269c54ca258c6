//! Reproducible Gaussian increment streams.
//!
//! A stream is a ChaCha8 keystream selected by `(seed, stream_id)`; the `n`-th
//! draw of a stream is a pure function of the key, so paths can be generated
//! by any worker in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn normals(&self) -> NormalSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        NormalSource { rng }
    }
}

/// Sequential standard-normal draws from one stream.
pub struct NormalSource {
    rng: ChaCha8Rng,
}

impl NormalSource {
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}
