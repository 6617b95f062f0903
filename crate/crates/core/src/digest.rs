//! SHA-256 helpers shared by fixture lookup, cache keys and report provenance.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Digest of the compact JSON encoding of `value`.
///
/// Struct fields serialize in declaration order and maps used here are
/// ordered, so the encoding is canonical for our types.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(bytes)
}
