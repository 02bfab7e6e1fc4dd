//! Deterministic seed derivation and RNG construction.
//!
//! Every stochastic operation in the toolkit draws from a ChaCha8 stream
//! seeded through this module, so runs are bit-identical across platforms
//! and independent of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step: the standard 64-bit mix used to expand and combine seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of indices (e.g. rate index,
/// algorithm index). Different paths give statistically independent seeds;
/// the same path always gives the same seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &part in path {
        state = splitmix64(state ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    state
}

/// The toolkit-wide RNG. ChaCha8 is seedable from a bare u64 and produces
/// identical streams on every platform.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
