//! Serde helpers for 16-byte blocks written as hex strings.

use serde::{de::Error, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(bytes: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
    let text = String::deserialize(d)?;
    parse(&text).map_err(D::Error::custom)
}

/// Parses 32 hex digits into a block.
pub fn parse(text: &str) -> Result<[u8; 16], String> {
    let raw = hex::decode(text.trim()).map_err(|e| format!("bad hex block {text:?}: {e}"))?;
    raw.try_into()
        .map_err(|v: Vec<u8>| format!("expected 16 bytes, got {}", v.len()))
}
