//! Seed handling.
//!
//! All randomness in a run flows from one master seed. Subsystems
//! derive independent counter-based streams keyed by a domain label,
//! so the draws of one subsystem never depend on how often another
//! subsystem touched its own stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a deterministic RNG for `domain` from the master seed.
pub fn derive_rng(seed: u64, domain: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Derives a sub-seed for a nested subsystem (e.g. per-sweep runs).
pub fn derive_seed(seed: u64, domain: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
