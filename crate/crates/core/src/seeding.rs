//! Seed fan-out and content hashing.
//!
//! A single global seed drives every stage of the pipeline. Each stage derives
//! its own seed as `splitmix64(global_seed ^ fnv1a64(stage_label))`, so stages
//! can be rerun independently and still reproduce exactly.

use sha2::{Digest, Sha256};

/// One step of the splitmix64 sequence; a cheap, well-mixed 64-bit hash.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive a stage-specific seed from the global seed and a stage label.
pub fn derive_seed(global_seed: u64, label: &str) -> u64 {
    splitmix64(global_seed ^ fnv1a64(label.as_bytes()))
}

/// SHA-256 digest of a byte string.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

/// SHA-256 digest rendered as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_string(&sha256(bytes))
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
