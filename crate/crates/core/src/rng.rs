//! Named random streams derived from one root seed.
//!
//! Every consumer asks for a stream by purpose string, so adding a consumer
//! never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator used across the crate.
pub type StreamRng = ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one 64-bit value.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| mix64(acc ^ mix64(w)))
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Root seed plus purpose-keyed stream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for the stream named `purpose`.
    pub fn seed(&self, purpose: &str) -> u64 {
        hash_words(&[self.root, hash_str(purpose)])
    }

    /// Seed for the `index`-th member of the stream family `purpose`.
    pub fn seed_indexed(&self, purpose: &str, index: u64) -> u64 {
        hash_words(&[self.root, hash_str(purpose), index])
    }

    pub fn stream(&self, purpose: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.seed(purpose))
    }

    pub fn stream_indexed(&self, purpose: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.seed_indexed(purpose, index))
    }
}

/// Uniform value in `[0, 1)` from a hash word.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
