//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 stream
//! cipher generator (`rand_chacha` 0.9). Independent streams for parallel
//! work are derived from a root seed plus a path of integers with a
//! SplitMix64 mixer, so results never depend on worker count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used when deriving sub-streams. Keeping them central avoids
/// two subsystems accidentally sharing a stream.
pub mod tag {
    pub const SYNTH_TRAIN: u64 = 0x01;
    pub const SYNTH_EVAL: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const BATCH: u64 = 0x05;
    pub const AUGMENT: u64 = 0x06;
    pub const SYNTH_FAKE: u64 = 0x07;
    pub const GRADCHECK: u64 = 0x08;
    pub const SYNTH_EVAL_FINE: u64 = 0x09;
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of stream identifiers.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    seeded(derive_seed(seed, path))
}
