//! Seed splitting.
//!
//! Every random stream is derived from one top-level seed and a stream name:
//! `derive_seed(seed, name) = splitmix64(seed ^ fnv1a64(name))`. The rule is
//! fixed so that components stay reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(stream.as_bytes()))
}

pub fn stream_rng(seed: u64, stream: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream))
}
