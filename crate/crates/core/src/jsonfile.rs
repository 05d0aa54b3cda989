//! Versioned JSON files shared by model bundles and reports.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn to_versioned_string<T: Serialize>(body: &T) -> String {
    let v = Versioned {
        version: FILE_VERSION,
        body,
    };
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_versioned<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    fs::write(path, to_versioned_string(body)).map_err(|e| Error::io(path, e))
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != u64::from(FILE_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FILE_VERSION,
        });
    }
    let v: Versioned<T> = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    Ok(v.body)
}

/// Pretty JSON without a version envelope, newline-terminated.
pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_pretty(value)).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
