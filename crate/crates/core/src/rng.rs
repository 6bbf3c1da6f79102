//! Seed derivation.
//!
//! All randomness flows from a base seed through [`mix`], so independent
//! streams (per split group, per trial, per search axis) never depend on how
//! much randomness another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stream key.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// 64-bit FNV-1a of a name, used to key streams by string.
pub fn name_key(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// The generator used everywhere in the crate.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Fixed stream keys for the pipeline stages.
pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_MODEL: u64 = 2;
pub(crate) const STREAM_TUNE: u64 = 3;
pub(crate) const STREAM_SYNTH: u64 = 4;
