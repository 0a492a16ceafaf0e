//! Named-stream seed splitting.
//!
//! Every consumer of randomness asks for a stream by name (and optionally an index),
//! so a module can be rerun in isolation and reproduce the same draws it made inside
//! a full pipeline run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// RNG for the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    indexed(seed, name, 0)
}

/// RNG for the `index`-th member of stream `name`; used for per-task seeds that must
/// not depend on scheduling order.
pub fn indexed(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&0x6879_6272_6964_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A child seed for handing to a component that takes a plain `u64`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    stream(seed, name).next_u64()
}
