//! Seeded random streams.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded through
//! [`SeedableRng::seed_from_u64`]. Per-item streams (segment `id` of a dataset,
//! candidate `i` of a generate-and-test run) use the sub-seed
//! `splitmix64(seed ^ splitmix64(id))`, so work can be split across threads
//! and still reproduce the sequential result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser (Steele, Lea & Flood).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sub_seed(seed: u64, id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(id))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream for item `id` under `seed`.
pub fn item_rng(seed: u64, id: u64) -> Rng {
    rng_from_seed(sub_seed(seed, id))
}

/// Stream for a named purpose (holdout split, level assembly, ...) under `seed`.
pub fn stream_rng(seed: u64, purpose: &str) -> Rng {
    let tag = purpose
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    rng_from_seed(splitmix64(seed ^ tag))
}
