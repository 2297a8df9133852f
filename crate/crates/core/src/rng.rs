//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` derived from one root
//! seed plus a path of labels, so independent consumers never share state and
//! adding a consumer does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A node in the seed tree. Cheap to copy; `rng()` materializes a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: splitmix64(seed),
        }
    }

    pub fn child(&self, label: &str) -> Self {
        Self {
            state: splitmix64(self.state ^ label_hash(label)),
        }
    }

    pub fn index(&self, i: u64) -> Self {
        Self {
            state: splitmix64(self.state.wrapping_add(splitmix64(i ^ 0xA5A5_A5A5))),
        }
    }

    /// A plain integer seed for APIs that take one.
    pub fn value(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}
