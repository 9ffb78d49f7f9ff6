//! Canonical JSON and content digests.
//!
//! Canonical form: object keys sorted (serde_json's default map is ordered),
//! no whitespace, floats in shortest round-trip notation. Non-finite floats
//! have no JSON form and serialize as `null`.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

pub fn to_string(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string(&to_value(v)?)?)
}

/// Remove the named keys from every object, at any depth.
pub fn strip_keys(v: &mut Value, keys: &[&str]) {
    match v {
        Value::Object(map) => {
            for k in keys {
                map.remove(*k);
            }
            for child in map.values_mut() {
                strip_keys(child, keys);
            }
        }
        Value::Array(items) => {
            for child in items {
                strip_keys(child, keys);
            }
        }
        _ => {}
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical serialization with `excluded` keys removed.
pub fn digest(v: &impl Serialize, excluded: &[&str]) -> Result<String> {
    let mut value = to_value(v)?;
    strip_keys(&mut value, excluded);
    Ok(sha256_hex(serde_json::to_string(&value)?.as_bytes()))
}
