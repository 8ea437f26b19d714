//! Stable seed derivation.
//!
//! All randomness in the crate comes from `ChaCha8Rng` (rand_chacha 0.9)
//! seeded through `seed_from_u64`. Sub-seeds for shards and sweep runs are
//! derived with SplitMix64 so they never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    let seed = path.iter().fold(master, |acc, &i| derive_seed(acc, i));
    ChaCha8Rng::seed_from_u64(seed)
}
