//! Seed-stream derivation.
//!
//! One master seed spawns independent, named substreams (init, partition,
//! per-round sampling, per-client shuffling). Every stream is a
//! [`ChaCha12Rng`] keyed by a splitmix64 mix of the master seed, a domain
//! tag, and an index, so results never depend on the order in which streams
//! are created or consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; stable across platforms and releases.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for the substream `(tag, index)` of `master`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(master);
    for &b in tag.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

/// A fresh generator for the substream `(tag, index)` of `master`.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, tag, index))
}
