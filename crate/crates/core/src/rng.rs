//! Keyed random streams.
//!
//! Every consumer of randomness asks for a stream by `(seed, purpose, epoch,
//! index)`. The stream seeds a ChaCha8 generator, so a given key produces the
//! same sequence regardless of which thread draws it or in what order keys
//! are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub purpose: u64,
    pub epoch: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(purpose: &str, epoch: u64, index: u64) -> Self {
        Self { purpose: fnv1a(purpose.as_bytes()), epoch, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub key: StreamKey,
}

impl RngStream {
    pub fn new(seed: u64, purpose: &str, epoch: u64, index: u64) -> Self {
        Self { seed, key: StreamKey::new(purpose, epoch, index) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut bytes = [0u8; 32];
        let words = [self.key.purpose, self.key.epoch, self.key.index, 0x5EED_CAFE_F00D_D00D];
        for (chunk, w) in bytes.chunks_mut(8).zip(words) {
            state = splitmix64(state ^ w);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Shorthand for `RngStream::new(..).rng()`.
pub fn stream(seed: u64, purpose: &str, epoch: u64, index: u64) -> ChaCha8Rng {
    RngStream::new(seed, purpose, epoch, index).rng()
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
