//! Named, keyed random streams.
//!
//! Every stochastic draw in the system comes from a stream derived from
//! `(run_seed, label, indices...)`, so results never depend on evaluation
//! order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives an independent generator for the given key.
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Derives a child 64-bit seed, for APIs that want a plain integer.
pub fn derive_seed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    use rand::RngCore;
    stream(seed, label, indices).next_u64()
}

/// Hex SHA-256 of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
