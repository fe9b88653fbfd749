//! Flat `key = value` configuration files.
//!
//! Keys are the field names of the target struct. Values are read as JSON
//! when they parse as JSON (numbers, booleans, `[0.5, 0.9]`) and as bare
//! strings otherwise. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

/// Overrides fields of `base` with `pairs`; unknown keys are rejected.
pub fn apply_kv<T: Serialize + DeserializeOwned>(base: &T, pairs: &BTreeMap<String, String>) -> Result<T> {
    let mut v = serde_json::to_value(base).map_err(|e| Error::config(e.to_string()))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::config("configuration target is not a record"))?;
    for (k, raw) in pairs {
        let slot = obj
            .get_mut(k)
            .ok_or_else(|| Error::config(format!("unknown key '{k}'")))?;
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
    }
    serde_json::from_value(v).map_err(|e| Error::config(e.to_string()))
}

/// Every field of `value` as `key = value` lines, defaults included.
pub fn to_kv<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let mut out = String::new();
    if let Value::Object(map) = v {
        for (k, v) in map {
            let s = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {s}\n"));
        }
    }
    out
}
