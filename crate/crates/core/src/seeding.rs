//! Named-stream RNG derivation.
//!
//! All randomness in a run flows from a single 64-bit master seed. Each
//! consumer derives its own stream by name ("batch", "dropout", "init",
//! "synth", "seeds", ...), so adding a new consumer never perturbs the draws
//! seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for the named stream.
pub fn stream_seed(master_seed: u64, stream: &str) -> u64 {
    let mut state = master_seed ^ fnv1a(stream.as_bytes());
    splitmix64(&mut state)
}

/// Returns a deterministic RNG for the named stream.
pub fn stream_rng(master_seed: u64, stream: &str) -> ChaCha8Rng {
    let mut state = master_seed ^ fnv1a(stream.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
