//! Seeded randomness. Every random draw in the toolkit goes through a
//! [`ChaCha8Rng`] whose seed is derived from a run seed and a path of stream
//! tags, so any piece of work (an epoch, a trial, a sample's mask) can be
//! reproduced in isolation.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for the stream identified by `path` under `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Stream tags used across the crate.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MASK: u64 = 3;
    pub const CORPUS: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const PROTOTYPE: u64 = 7;
}
