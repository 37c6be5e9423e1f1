//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic component (a chain, a bootstrap replicate, a grid unit)
//! gets its own generator seeded from a master seed plus a path of integer
//! tags, so results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SaeRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of tags into a new 64-bit seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0xD1B5_4A32_D192_ED03);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_from_seed(seed: u64) -> SaeRng {
    SaeRng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tags: &[u64]) -> SaeRng {
    rng_from_seed(derive_seed(master, tags))
}
