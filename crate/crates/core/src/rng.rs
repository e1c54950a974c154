//! Seed derivation for independent, named random streams.
//!
//! One user-facing seed fans out into sub-streams (generation, init,
//! dropout, shuffling) and per-item streams (scene index, batch slot), so any
//! component can be reproduced in isolation and parallel work does not depend
//! on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_GENERATE: &str = "generate";
pub const STREAM_INIT: &str = "init";
pub const STREAM_DROPOUT: &str = "dropout";
pub const STREAM_SHUFFLE: &str = "shuffle";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Mixes a seed with a path of indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, name: &str, path: &[u64]) -> Rng {
    let base = derive_seed(seed, &[fnv1a(name)]);
    Rng::seed_from_u64(derive_seed(base, path))
}
