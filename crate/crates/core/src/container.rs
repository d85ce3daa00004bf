//! Reader and writer for the safetensors-style tensor container.
//!
//! ```text
//! [u64 LE header length N][N bytes of UTF-8 JSON][row-major LE f32 payload]
//! ```
//!
//! The header maps each tensor name to `{"dtype","shape","data_offsets"}`,
//! offsets relative to the payload start, plus an optional `__metadata__`
//! string map. Only `F32` is accepted. Output is canonical: metadata first,
//! then tensors in sorted name order, packed without padding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorMap};

const METADATA_KEY: &str = "__metadata__";

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

pub fn load_tensor_map(path: impl AsRef<Path>) -> Result<TensorMap> {
    let bytes = fs::read(path)?;
    decode_tensor_map(&bytes)
}

pub fn save_tensor_map(map: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tensor_map(map))?;
    Ok(())
}

pub fn encode_tensor_map(map: &TensorMap) -> Vec<u8> {
    let mut header = String::from("{");
    let mut first = true;
    if !map.metadata().is_empty() {
        header.push_str(&format!(
            "{}:{}",
            json_string(METADATA_KEY),
            serde_json::to_string(map.metadata()).expect("string map serializes")
        ));
        first = false;
    }
    let mut offset = 0u64;
    for (name, tensor) in map.iter() {
        let len = 4 * tensor.len() as u64;
        let entry = HeaderEntry {
            dtype: "F32".into(),
            shape: tensor.shape().to_vec(),
            data_offsets: [offset, offset + len],
        };
        offset += len;
        if !first {
            header.push(',');
        }
        first = false;
        header.push_str(&json_string(name));
        header.push(':');
        header.push_str(&serde_json::to_string(&entry).expect("header entry serializes"));
    }
    header.push('}');

    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, tensor) in map.iter() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensor_map(bytes: &[u8]) -> Result<TensorMap> {
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the length prefix",
            bytes.len()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let available = (bytes.len() - 8) as u64;
    if header_len > available {
        return Err(Error::MalformedHeader(format!(
            "header length {header_len} exceeds the {available} bytes after the prefix"
        )));
    }
    let header_end = 8 + header_len as usize;
    let header: BTreeMap<String, Value> =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut metadata = BTreeMap::new();
    let mut spans: Vec<(u64, u64, String)> = Vec::new();
    let mut tensors = Vec::new();
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata =
                serde_json::from_value(value).map_err(|e| Error::MalformedHeader(format!("__metadata__: {e}")))?;
            continue;
        }
        let entry: HeaderEntry =
            serde_json::from_value(value).map_err(|e| Error::MalformedHeader(format!("{name}: {e}")))?;
        if entry.dtype != "F32" {
            return Err(Error::UnsupportedDtype(entry.dtype));
        }
        let [begin, end] = entry.data_offsets;
        let count: u64 = entry.shape.iter().map(|&d| d as u64).product();
        if entry.shape.is_empty() || count == 0 {
            return Err(Error::MalformedHeader(format!(
                "{name}: shape {:?} is not a rank >= 1 tensor with positive dims",
                entry.shape
            )));
        }
        if end < begin || end - begin != 4 * count {
            return Err(Error::MalformedHeader(format!(
                "{name}: offsets [{begin}, {end}] do not hold {count} f32 values"
            )));
        }
        if end > payload.len() as u64 {
            return Err(Error::TruncatedPayload(format!(
                "{name} ends at {end}, payload has {} bytes",
                payload.len()
            )));
        }
        spans.push((begin, end, name.clone()));
        tensors.push((name, entry.shape, begin as usize, end as usize));
    }

    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::OffsetOverlap(format!("{} and {}", pair[0].2, pair[1].2)));
        }
    }

    let mut map = TensorMap::new();
    for (name, shape, begin, end) in tensors {
        let data: Vec<f32> = payload[begin..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(name));
        }
        let tensor = Tensor::new(shape, data)?;
        map.insert(name, tensor)?;
    }
    Ok(map.with_metadata(metadata))
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}
