//! Stable content hashes used for cache keys, seeds and fingerprints.
//!
//! Everything here is SHA-256 based so results agree across processes and
//! platforms; `std`'s hasher is randomized per process and is never used for
//! anything that is persisted.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of the concatenation of `parts`, each followed by a
/// NUL separator so that `("ab", "c")` and `("a", "bc")` differ.
pub fn sha256_hex(parts: &[&str]) -> String {
    let digest = digest(parts);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// First eight bytes of the SHA-256 digest, big-endian.
pub fn stable_u64(parts: &[&str]) -> u64 {
    let digest = digest(parts);
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

/// Derives a named sub-seed from a root seed.
pub fn sub_seed(root: u64, name: &str) -> u64 {
    stable_u64(&[&root.to_string(), name])
}

/// Fingerprint of an id set, independent of the order ids are supplied in.
pub fn id_fingerprint<'a, I>(ids: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    sha256_hex(&ids)
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize().into()
}
