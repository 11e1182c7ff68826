//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose seed is derived
//! from the run seed and a stream index, so trajectories, batches and epochs can
//! be generated independently (or in parallel) without sharing RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer applied to `base ^ stream'`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Named streams so unrelated consumers of the same run seed never collide.
pub mod stream {
    pub const EXPERT_TRAIN: u64 = 0x1000;
    pub const EXPERT_TEST: u64 = 0x2000;
    pub const FEATURE_NOISE: u64 = 0x3000;
    pub const GENERATED_BATCH: u64 = 0x4000;
    pub const MINIBATCH: u64 = 0x5000;
    pub const INPUT_NOISE: u64 = 0x6000;
    pub const MODEL_INIT: u64 = 0x7000;
    pub const SOFT_Q: u64 = 0x8000;
    pub const MMA_INIT: u64 = 0x9000;
}
