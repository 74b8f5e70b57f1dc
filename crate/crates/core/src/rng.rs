//! Seed derivation for reproducible experiment grids.
//!
//! Every random stream is a [`ChaCha8Rng`] seeded from a 64-bit value. Child seeds are
//! derived by folding indices into the parent seed through the SplitMix64 finalizer, so
//! a cell of an experiment grid can be regenerated without replaying its neighbours.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer (a 64-bit avalanche function).
pub fn avalanche(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds each index into `seed` in order: `s <- avalanche(s ^ avalanche(i + 1))`.
pub fn derive_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(avalanche(seed), |s, &i| {
        avalanche(s ^ avalanche(i.wrapping_add(1)))
    })
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
