//! Deterministic seed derivation.
//!
//! Every stochastic stage (parameter init, label sampling, per-epoch
//! augmentation, scene generation for a given split) draws from its own
//! RNG seeded by `derive_seed(base, tag, index)`. Streams stay decoupled:
//! adding a draw to one stage never shifts another, which keeps paired
//! ablation runs noise-aligned.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a 64-bit hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates consecutive inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed, a purpose tag, and an index into an independent seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(base ^ fnv1a64(tag.as_bytes()).rotate_left(17) ^ splitmix64(index))
}

/// ChaCha12 RNG for one (base, tag, index) stream.
pub fn rng_for(base: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(base, tag, index))
}
