//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by a root seed plus a substream name, so independent consumers never
//! share or reorder draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a 64-bit seed from a root seed and a path of labels.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

pub fn substream(root: u64, labels: &[&str]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
