//! Per-step random streams derived from one experiment seed.
//!
//! Each step of a run owns an independent generator addressed by
//! `(seed, step)`. Random access matters for the asynchronous simulator,
//! which re-derives the generator of an earlier step to evaluate that
//! step's stochastic gradient at a second point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one step of one experiment.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed) ^ (step as u64));
    ChaCha8Rng::seed_from_u64(mixed)
}
