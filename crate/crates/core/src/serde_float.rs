//! Serde adapter for `f64` fields that may legitimately be non-finite
//! (diverging rate ratios, undefined p-values). serde_json silently turns
//! NaN and infinities into `null`, which would make summaries unreadable;
//! this adapter round-trips them as the strings "nan", "inf", and "-inf".
//!
//! Use as `#[serde(with = "crate::serde_float")]`.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) => match s.as_str() {
            "nan" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!(
                "expected a number or one of \"nan\"/\"inf\"/\"-inf\", got {other:?}"
            ))),
        },
    }
}
