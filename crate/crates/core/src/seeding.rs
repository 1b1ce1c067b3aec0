//! Deterministic derivation of independent random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! mixed from a run seed and a small tuple of tags, so results depend only on
//! (config, seed) and never on call order across components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with `tags` into a new 64-bit seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// A ChaCha8 stream keyed by `seed` and `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

// Stream tags shared across modules.
pub(crate) const TAG_USERS: u64 = 1;
pub(crate) const TAG_ITEMS: u64 = 2;
pub(crate) const TAG_THETA: u64 = 3;
pub(crate) const TAG_STEP: u64 = 4;
pub(crate) const TAG_NOISE: u64 = 5;
pub(crate) const TAG_DRIFT: u64 = 6;
pub(crate) const TAG_HYPERNET: u64 = 7;
pub(crate) const TAG_TRAIN: u64 = 8;
pub(crate) const TAG_RANDOM_POLICY: u64 = 9;
pub(crate) const TAG_ORACLE: u64 = 10;
pub(crate) const TAG_SIMULATION: u64 = 11;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(42, &[1, 2]).random();
        let b: u64 = stream(42, &[1, 2]).random();
        let c: u64 = stream(42, &[2, 1]).random();
        let d: u64 = stream(43, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
