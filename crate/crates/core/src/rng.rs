//! Seeded generator streams.
//!
//! Every randomized operation takes an explicit generator. Independent streams
//! (per event, per epoch, ...) are derived from a global seed so serial and
//! parallel execution consume identical random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream label and an index into a new seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(seed: u64, stream: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(seed, stream, index))
}

/// Stream labels used across the pipeline.
pub mod streams {
    pub const EVENT: u64 = 0x4556_454e_54;
    pub const MODEL_LIBRARY: u64 = 0x4d4f_4445_4c;
    pub const NOISE: u64 = 0x4e4f_4953_45;
    pub const SPLIT: u64 = 0x5350_4c49_54;
    pub const INIT: u64 = 0x494e_4954;
    pub const EPOCH: u64 = 0x4550_4f43_48;
    pub const DROPOUT: u64 = 0x4452_4f50;
}
