//! Fixed-precision float output for JSON artifacts.
//!
//! `serde_json` prints the shortest round-tripping form, which varies in length.
//! Output files instead use a fixed textual form so they diff cleanly.

use serde::ser::{Error as _, SerializeSeq};
use serde::Serializer;
use serde_json::value::RawValue;

/// 17 significant digits in scientific notation, e.g. `1.2500000000000000e-1`.
pub fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Fixed 6 decimals, e.g. `3.141593`.
pub fn fixed6(v: f64) -> String {
    format!("{v:.6}")
}

fn raw<S: Serializer>(text: String, serializer: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(text).map_err(S::Error::custom)?;
    serializer.serialize_some(&raw)
}

fn seq<S: Serializer>(values: &[f64], fmt: fn(f64) -> String, serializer: S) -> Result<S::Ok, S::Error> {
    let mut s = serializer.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(S::Error::custom(format!("non-finite value {v} in output")));
        }
        s.serialize_element(&RawValue::from_string(fmt(v)).map_err(S::Error::custom)?)?;
    }
    s.end()
}

/// `serialize_with` helper for a single float at 17 significant digits.
pub fn ser_sig17<S: Serializer>(v: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return Err(S::Error::custom(format!("non-finite value {v} in output")));
    }
    raw(sig17(*v), serializer)
}

pub fn ser_fixed6<S: Serializer>(v: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return Err(S::Error::custom(format!("non-finite value {v} in output")));
    }
    raw(fixed6(*v), serializer)
}

/// `null` for `None`.
pub fn ser_sig17_opt<S: Serializer>(v: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_sig17(v, serializer),
        None => serializer.serialize_none(),
    }
}

pub fn ser_sig17_vec<S: Serializer>(v: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    seq(v, sig17, serializer)
}

pub fn ser_fixed6_vec<S: Serializer>(v: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    seq(v, fixed6, serializer)
}

/// Pretty-prints with a trailing newline.
pub fn to_pretty<T: serde::Serialize>(value: &T) -> crate::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
