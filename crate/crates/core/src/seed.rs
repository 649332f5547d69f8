//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha generator seeded from a
//! 64-bit value derived by mixing a parent seed with small integer
//! coordinates, so cells, points and codewords draw independent streams
//! without sharing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a coordinate path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(parent), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(parent: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(parent, path))
}
