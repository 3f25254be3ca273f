//! Labeled, reproducible random streams.
//!
//! A stream is identified by a 64-bit seed and a textual label; the same
//! `(seed, label)` pair always materializes the same ChaCha8 generator.
//! Parallel or structured work derives child streams with distinct labels
//! instead of sharing one generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a over raw bytes. Used for label mixing, feature hashing and
/// file checksums.
pub fn fnv64(bytes: &[u8]) -> u64 {
    fnv64_seeded(0xcbf2_9ce4_8422_2325, bytes)
}

pub fn fnv64_seeded(basis: u64, bytes: &[u8]) -> u64 {
    let mut hash = basis;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self {
            seed,
            label: label.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Child stream with an independent draw sequence.
    pub fn derive(&self, sub: &str) -> Self {
        Self {
            seed: self.seed,
            label: format!("{}/{}", self.label, sub),
        }
    }

    /// Materialize the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let h1 = fnv64(self.label.as_bytes());
        let h2 = fnv64_seeded(h1 ^ 0x9e37_79b9_7f4a_7c15, self.label.as_bytes());
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&h1.to_le_bytes());
        key[16..24].copy_from_slice(&h2.to_le_bytes());
        key[24..32].copy_from_slice(b"ovmlab01");
        ChaCha8Rng::from_seed(key)
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
    use rand_chacha::rand_core::RngCore;
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
