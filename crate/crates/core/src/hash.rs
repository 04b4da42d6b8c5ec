//! Content hashes that tie artifacts to the configuration that made them.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// JSON with object keys sorted and no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // `Value` keeps maps in a BTreeMap, which sorts keys
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

/// Hex SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(canonical_json(value)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
