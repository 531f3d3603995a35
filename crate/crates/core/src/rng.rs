//! Seeded generator construction, shared by the library and its callers.

pub use rand_chacha::ChaCha8Rng;

use rand_chacha::rand_core::SeedableRng;

/// Deterministic, platform-independent generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
