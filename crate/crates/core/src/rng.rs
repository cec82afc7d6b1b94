//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `u64` seed. Derived streams
//! are keyed by a purpose tag so that, for example, the choice of which
//! examples get corrupted never shares randomness with the corruption itself.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `seed` with a stream tag and index (splitmix64 finalizer).
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    from_seed(derive(seed, tag, index))
}

pub(crate) mod tag {
    pub const SYNTH_JITTER: u64 = 1;
    pub const OOD: u64 = 2;
    pub const NOISE_PICK: u64 = 3;
    pub const NOISE_TRANSFORM: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const EPOCH: u64 = 6;
    pub const INIT: u64 = 7;
    pub const ATTACK_START: u64 = 8;
    pub const TEST_SET: u64 = 9;
    pub const POST_EPOCH: u64 = 10;
}
