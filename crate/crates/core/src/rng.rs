//! Seed splitting.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a single
//! user seed through [`split_seed`], so runs are reproducible across
//! platforms and thread counts.

/// SplitMix64 finalizer applied to `seed` mixed with `index`.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
