//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 so runs are reproducible across
//! platforms. Independent streams are derived from a base seed and a purpose
//! tag rather than by consuming one shared generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags never share a stream for the same seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DISTILL_INIT: u64 = 3;
    pub const DISTILL_WEIGHTS: u64 = 4;
    pub const DISTILL_BATCH: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const EVAL: u64 = 9;
}

/// Generator for `(seed, tag, index)`. `index` must stay below 2^48.
pub fn derive(seed: u64, tag: u64, index: u64) -> Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | index);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
