//! Seedable, splittable randomness.
//!
//! A stream is ChaCha12 keyed by a 32-byte key. The root key is
//! `SHA-256("neon-rng/v1" ‖ seed_le)` and a child key is
//! `SHA-256(parent_key ‖ 0x00 ‖ label)`. Forking reads only the parent key,
//! never the parent's position, so children do not depend on how much the
//! parent (or any sibling) has been consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    key: [u8; 32],
    stream: ChaCha12Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"neon-rng/v1");
        h.update(seed.to_le_bytes());
        Self::from_key(seed, h.finalize().into())
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        Self {
            seed,
            key,
            stream: ChaCha12Rng::from_seed(key),
        }
    }

    /// Root seed this stream descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, label: &str) -> RngState {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update([0u8]);
        h.update(label.as_bytes());
        Self::from_key(self.seed, h.finalize().into())
    }

    pub fn normal(&mut self) -> f64 {
        self.stream.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.stream.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.stream.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.stream);
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.stream.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.stream.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.stream.fill_bytes(dst)
    }
}
