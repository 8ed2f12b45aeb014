//! Deterministic seed splitting for parallel trials.
//!
//! A per-trial seed is `mix(mix(mix(master) ^ point) ^ trial)` where `mix`
//! is the SplitMix64 finalizer. Every worker then owns a ChaCha8 stream
//! seeded from its own value, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SEED_RULE: &str =
    "seed(point, trial) = splitmix64(splitmix64(splitmix64(master) ^ point) ^ trial); stream = ChaCha8";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, point: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point) ^ trial)
}

pub fn trial_rng(master: u64, point: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, point, trial))
}
