//! Named RNG substreams derived from one root seed.
//!
//! Every source of randomness (data generation, parameter init, dropout,
//! code-switching, shuffling) draws from its own stream so that changing
//! one knob never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic substream keyed by a tag and an index path
/// (e.g. `stream(seed, "dropout", &[epoch, step])`).
pub fn stream(root: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(root ^ fnv1a(tag.as_bytes()));
    for &i in indices {
        state = splitmix64(state ^ i);
    }
    ChaCha8Rng::seed_from_u64(state)
}
