//! Seeded random streams.
//!
//! All randomness goes through [`SeededRng`], a ChaCha8 stream keyed by a
//! 64-bit seed (`rand_chacha::ChaCha8Rng::seed_from_u64`). ChaCha output is
//! specified bit-for-bit, so a seed yields the same stream on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids passed to [`SeededRng::fork`] by the training pipeline.
pub mod streams {
    pub const SPLIT: u64 = 10;
    pub const INIT: u64 = 11;
    pub const DROPOUT: u64 = 12;
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream for one purpose (splits, initialization,
    /// dropout...) derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
