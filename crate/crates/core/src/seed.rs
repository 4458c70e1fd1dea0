//! Deterministic randomness.
//!
//! Every stochastic routine takes an explicit [`Seed`]. Streams come from
//! ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), a counter-based
//! generator, so a reimplementation can reproduce them. Child seeds are
//! derived with the SplitMix64 finalizer applied to `value ^ (tag * GOLDEN)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed(value)
    }

    /// Independent child seed for sub-task `tag`.
    pub fn derive(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ tag.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
