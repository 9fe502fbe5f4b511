//! Seed expansion. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from a `u64` obtained here, so a single root seed fixes a whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of a named stage (and an index within it, e.g. a fold)
/// from a root seed.
pub fn subseed(root: u64, stage: &str, index: u64) -> u64 {
    // FNV-1a over the stage label
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(mix(root ^ h).wrapping_add(index))
}
