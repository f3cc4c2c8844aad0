//! Versioned binary container for parameter tensors.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` manifest length, the
//! manifest as UTF-8 JSON, then every tensor as little-endian `f64` in
//! manifest order.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"STYAUG\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Content kind, e.g. `"stylizer"` or `"segnet-checkpoint"`.
    pub kind: String,
    /// Kind-specific metadata (configuration echo, epoch, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

pub fn encode(kind: &str, meta: serde_json::Value, store: &ParamStore) -> Result<Vec<u8>> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta,
        tensors: store
            .entries()
            .iter()
            .map(|e| TensorInfo {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + store.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in store.entries() {
        for v in e.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Manifest, ParamStore)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing container magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20 + len)
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut offset = 20 + len;
    let mut store = ParamStore::new();
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad(format!("truncated tensor {}", t.name)))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = ArrayD::from_shape_vec(IxDyn(&t.shape), data)
            .map_err(|e| bad(format!("tensor {}: {e}", t.name)))?;
        store.add(t.name.clone(), value);
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((manifest, store))
}

pub fn write(path: &Path, kind: &str, meta: serde_json::Value, store: &ParamStore) -> Result<()> {
    let bytes = encode(kind, meta, store)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, expected_kind: &str) -> Result<(Manifest, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, store) = decode(&bytes, path)?;
    if manifest.kind != expected_kind {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected a {expected_kind} file, found {}", manifest.kind),
        });
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut store = ParamStore::new();
            store.add("a", ArrayD::from_shape_vec(IxDyn(&[split]), values[..split].to_vec()).unwrap());
            store.add("b.w", ArrayD::from_shape_vec(IxDyn(&[1, values.len() - split]), values[split..].to_vec()).unwrap());
            let meta = serde_json::json!({"epoch": 3});
            let bytes = encode("test", meta.clone(), &store).unwrap();
            let (m, back) = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(m.meta, meta);
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let mut store = ParamStore::new();
        store.add_constant("x", &[3], 1.5);
        let bytes = encode("test", serde_json::Value::Null, &store).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong, Path::new("m")).is_err());
    }
}
