//! Seeded random-number streams and seed derivation.
//!
//! Every stochastic operation in the crate takes an explicit [`RngStream`],
//! so a run is a pure function of its seed. Independent sub-tasks (grid
//! cells, simulation pairs) derive child seeds with [`derive_seed`] instead
//! of sharing a stream, which keeps their results independent of execution
//! order.

use rand::SeedableRng;

/// The PRNG used throughout the crate.
pub type RngStream = rand_chacha::ChaCha8Rng;

/// Create a stream from a bare seed.
pub fn stream(seed: u64) -> RngStream {
    RngStream::seed_from_u64(seed)
}

/// Derive a child seed from a base seed and a sequence of tags.
///
/// The derivation is a splitmix64 fold, so it depends only on the tag
/// values, never on how many other children exist.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x6A09_E667_F3BC_C908);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
