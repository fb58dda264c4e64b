//! Serde helpers for floats that may legitimately be infinite (thresholds,
//! ratio sentinels). Plain JSON numbers cannot spell infinity, so these
//! round-trip through the strings `"inf"` / `"-inf"`.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if *v == f64::INFINITY {
        serializer.serialize_str("inf")
    } else if *v == f64::NEG_INFINITY {
        serializer.serialize_str("-inf")
    } else {
        serializer.serialize_f64(*v)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Raw::deserialize(deserializer)? {
        Raw::Number(v) => Ok(v),
        Raw::Text(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
        Raw::Text(s) if s.eq_ignore_ascii_case("-inf") => Ok(f64::NEG_INFINITY),
        Raw::Text(s) => Err(serde::de::Error::custom(format!(
            "expected a number, \"inf\", or \"-inf\", got {s:?}"
        ))),
    }
}
