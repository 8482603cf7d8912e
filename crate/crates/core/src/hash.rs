//! Stable hashing for prompts, configs, and derived seeds.
//!
//! Everything downstream (audit logs, output headers, per-task sampling)
//! relies on these hashes being identical across runs and platforms, so they
//! are plain SHA-256 over length-prefixed parts rather than anything from
//! `std::hash`.

use sha2::{Digest, Sha256};

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        // Length prefix keeps ("ab","c") and ("a","bc") distinct.
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Full SHA-256 of the length-prefixed parts, lowercase hex.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    hex::encode(digest(parts))
}

/// First 16 hex chars of [`sha256_hex`]; the form stored in records and logs.
pub fn short_hash(parts: &[&[u8]]) -> String {
    let mut h = sha256_hex(parts);
    h.truncate(16);
    h
}

/// Deterministic child seed for a labeled subtask of a seeded run.
pub fn derived_seed(seed: u64, label: &str) -> u64 {
    let d = digest(&[&seed.to_le_bytes(), label.as_bytes()]);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
