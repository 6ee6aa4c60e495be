//! Sub-seed derivation.
//!
//! Every random stream in the crate is keyed by a hash of the user seed and a
//! label, so results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes `(seed, label, parts)` into 32 bytes of key material.
pub fn derive_key(seed: u64, label: &str, parts: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    hasher.finalize().into()
}

pub fn derive_seed(seed: u64, label: &str, parts: &[u64]) -> u64 {
    let key = derive_key(seed, label, parts);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

/// Stable 64-bit tag for a string such as a piece id.
pub fn tag(s: &str) -> u64 {
    derive_seed(0, s, &[])
}

pub fn rng(seed: u64, label: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(seed, label, parts))
}
