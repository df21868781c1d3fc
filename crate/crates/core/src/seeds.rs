//! Per-module seed derivation from one master seed.
//!
//! `derive(master, label)` is the first eight bytes (little endian) of
//! `SHA-256(master.to_le_bytes() || label)`. Streams are keyed by name, so
//! adding a consumer never shifts the seeds of the others.

use sha2::{Digest, Sha256};

pub fn derive(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
