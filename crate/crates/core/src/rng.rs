//! Seed streams derived from one 64-bit master seed.
//!
//! Every consumer of randomness (dataset sampling, parameter initialization,
//! reparameterization noise, label draws, ...) gets its own ChaCha stream,
//! addressed by a purpose tag and a counter. Two streams never share state,
//! so any component can be replayed without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a derived stream is used for. The discriminant is part of the
/// derivation, so reordering variants changes every derived stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Sampling = 1,
    Init = 2,
    Noise = 3,
    Evaluation = 4,
    Labels = 5,
    Adaptation = 6,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A master seed from which independent, reproducible streams are split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedStream(pub u64);

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self(master)
    }

    pub fn master(&self) -> u64 {
        self.0
    }

    /// Stream `counter` for `purpose`. Distinct `(purpose, counter)` pairs give
    /// statistically independent generators.
    pub fn stream(&self, purpose: Purpose, counter: u64) -> ChaCha8Rng {
        let key = splitmix64(self.0 ^ splitmix64(purpose as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(counter);
        rng
    }

    /// A child master seed, e.g. one per sweep cell.
    pub fn child(&self, counter: u64) -> SeedStream {
        SeedStream(splitmix64(splitmix64(self.0).wrapping_add(counter)))
    }
}
