//! File helpers shared by every stage: atomic writes, JSON-lines reading and
//! fixed-precision float formatting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Result, XtfError};

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| XtfError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| XtfError::Input(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| XtfError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| XtfError::io(&tmp, e))?;
        f.sync_all().map_err(|e| XtfError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| XtfError::io(path, e))
}

pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| XtfError::io(path, e))
}

/// Parses one JSON value per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| XtfError::Format(format!("{what} line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    parse_jsonl(&read_to_string(path)?, &path.display().to_string())
}

/// Float with 17 significant digits, which round-trips every finite f64.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keeps the sign of -0.0
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    format!("{v:.16e}")
}

pub fn fmt_f64_array(vs: &[f64]) -> String {
    let mut s = String::with_capacity(vs.len() * 24 + 2);
    s.push('[');
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_f64(*v));
    }
    s.push(']');
    s
}

pub fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}
