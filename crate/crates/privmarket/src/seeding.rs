//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own generator keyed by
//! `(base seed, purpose tag, indices…)`, so components can be reordered,
//! skipped, or evaluated concurrently without shifting each other's random
//! streams.

/// SplitMix64 finalizer: a cheap, well-mixed 64-bit permutation.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a tag path.
///
/// The derivation folds each tag through a SplitMix64 permutation, so
/// distinct paths give statistically independent seeds and the same path
/// always gives the same seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x5138_AC5D_71FA_93C1);
    for &tag in tags {
        state = splitmix(state ^ splitmix(tag));
    }
    state
}
