//! JSON config files with `key=value` overrides.
//!
//! Precedence is override > file > built-in default. Every config struct
//! rejects unknown keys.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Parses `key=value`. The value is read as JSON when possible
/// (`0.3`, `true`, `null`, `[1,2]`), otherwise as a bare string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{raw}` has an empty key")));
    }
    let value = value.trim();
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
    Ok((key.to_string(), parsed))
}

/// Loads `T` from an optional file, applies overrides, and validates the
/// result by deserializing it again.
pub fn resolve<T>(file: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let base: T = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => T::default(),
    };
    apply_overrides(base, overrides)
}

pub fn apply_overrides<T>(base: T, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(&base).map_err(|e| Error::Config(e.to_string()))?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    for raw in overrides {
        let (key, v) = parse_override(raw)?;
        if !map.contains_key(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key, v);
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}
