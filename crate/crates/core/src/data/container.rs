//! Portable named-tensor container.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of UTF-8
//! JSON, then the payload of little-endian `f32` values. Entry offsets are
//! relative to the start of the payload and must tile it exactly.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    #[serde(default)]
    metadata: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

pub fn encode_container(entries: &[(String, Tensor)], metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut header = Header {
        format_version: FORMAT_VERSION,
        metadata: metadata.clone(),
        entries: Vec::with_capacity(entries.len()),
    };
    let mut offset = 0;
    for (name, t) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
        let length = 4 * t.len();
        header.entries.push(Entry {
            name: name.clone(),
            dtype: DTYPE.into(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in entries {
        out.extend(t.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let corrupt = |msg: String| Error::CorruptHeader(msg);
    if bytes.len() < 8 {
        return Err(corrupt(format!("file of {} bytes has no header length", bytes.len())));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let payload_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| corrupt(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[payload_start..];

    let mut seen = HashSet::new();
    for e in &header.entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::DuplicateName(e.name.clone()));
        }
        if e.dtype != DTYPE {
            return Err(corrupt(format!("entry {:?} has unsupported dtype {:?}", e.name, e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        if e.length != 4 * numel {
            return Err(corrupt(format!(
                "entry {:?} length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        let end = e.offset.saturating_add(e.length);
        if end > payload.len() {
            return Err(Error::OffsetOverflow {
                name: e.name.clone(),
                end,
                available: payload.len(),
            });
        }
    }
    let mut spans: Vec<(usize, usize)> = header.entries.iter().map(|e| (e.offset, e.length)).collect();
    spans.sort_unstable();
    let mut cursor = 0;
    for (offset, length) in spans {
        if offset != cursor {
            return Err(corrupt(format!("entries leave a gap or overlap at byte {cursor}")));
        }
        cursor += length;
    }
    if cursor != payload.len() {
        return Err(corrupt(format!(
            "entries cover {cursor} bytes but payload has {}",
            payload.len()
        )));
    }

    let tensors = header
        .entries
        .into_iter()
        .map(|e| {
            let data = payload[e.offset..e.offset + e.length]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok((e.name, Tensor::new(e.shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tensors, header.metadata))
}

pub fn save_container(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    save_container_with_metadata(path, entries, &serde_json::Value::Null)
}

pub fn save_container_with_metadata(
    path: impl AsRef<Path>,
    entries: &[(String, Tensor)],
    metadata: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(entries, metadata)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    Ok(load_container_with_metadata(path)?.0)
}

pub fn load_container_with_metadata(path: impl AsRef<Path>) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let path = path.as_ref();
    decode_container(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
