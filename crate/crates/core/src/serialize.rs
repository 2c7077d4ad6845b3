//! Versioned, self-describing model files.
//!
//! A model file is a JSON document `{"format": <kind>, "version": <n>,
//! "model": {...}}`. Floats are written in shortest round-trip form and
//! parsed exactly, so save/load is bit-exact for finite values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    model: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format: String,
    model: T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn to_bytes<T: Serialize>(kind: &str, model: &T) -> Result<Vec<u8>> {
    let env = EnvelopeOut {
        format: kind,
        version: FORMAT_VERSION,
        model,
    };
    let mut out = serde_json::to_vec(&env).map_err(|e| Error::Model(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_bytes<T: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<T> {
    let header = peek_header(bytes)?;
    if header.0 != kind {
        return Err(Error::Model(format!("expected a `{kind}` model, found `{}`", header.0)));
    }
    let env: EnvelopeIn<T> = serde_json::from_slice(bytes).map_err(|e| Error::Model(e.to_string()))?;
    debug_assert_eq!(env.format, kind);
    Ok(env.model)
}

/// Returns the `(format, version)` pair of a model file, rejecting versions
/// this build cannot read.
pub fn peek_header(bytes: &[u8]) -> Result<(String, u32)> {
    let h: Header = serde_json::from_slice(bytes).map_err(|e| Error::Model(e.to_string()))?;
    if h.version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported model version {}", h.version)));
    }
    Ok((h.format, h.version))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_kind_is_rejected() {
        let bytes = to_bytes("a", &vec![1.0f64, 0.1]).unwrap();
        assert!(from_bytes::<Vec<f64>>("b", &bytes).is_err());
        let back: Vec<f64> = from_bytes("a", &bytes).unwrap();
        assert_eq!(back, vec![1.0, 0.1]);
    }

    #[test]
    fn future_version_is_rejected() {
        let bytes = br#"{"format":"a","version":9,"model":[]}"#;
        assert!(peek_header(bytes).is_err());
    }

    #[test]
    fn floats_round_trip_bit_exactly() {
        let xs: Vec<f64> = (1..200).map(|i| (i as f64).ln() / 7.0 - 1e-300 * i as f64).collect();
        let back: Vec<f64> = from_bytes("x", &to_bytes("x", &xs).unwrap()).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
