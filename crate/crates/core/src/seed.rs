//! Seed derivation so per-item randomness is independent of iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream tag and an item index.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

pub fn rng_for(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

/// Stream tags, one per independent consumer of randomness.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const FPS: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EMBEDDING: u64 = 7;
    pub const BASELINE: u64 = 8;
    pub const DESCRIPTION: u64 = 9;
}
