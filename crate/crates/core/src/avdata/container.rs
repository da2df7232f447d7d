//! `AVTC0001` container: named f32 tensors plus string metadata.
//!
//! ```text
//! [0..8)    magic  "AVTC0001"
//! [8..16)   header length N, u64 little-endian
//! [16..16+N) UTF-8 JSON {"tensors":[{"name","dtype":"f32","shape"}...],"meta":{..}}
//! then      raw little-endian f32 payloads, concatenated in header order
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AVTC0001";
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(Error::Shape(format!("tensor {name:?} has a zero dimension: {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name:?} shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(NamedTensor { name, shape, data })
    }
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub tensors: Vec<NamedTensor>,
    pub meta: BTreeMap<String, String>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("container has no tensor {name:?}")))
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("container meta has no key {key:?}")))
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: BTreeMap<String, String>,
}

pub fn encode_container(tensors: &[NamedTensor], meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Shape(format!("duplicate tensor name {:?}", t.name)));
        }
        if t.shape.contains(&0) || t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {:?} shape {:?} does not match {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
    }
    let header = Header {
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|t| t.data.len() * 4).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"AVTC0001\""));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::format(bytes.len() as u64, "truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::format(8, format!("header length {header_len} exceeds file size {}", bytes.len()))
        })? as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::format(PREAMBLE as u64, format!("invalid header JSON: {e}")))?;

    let mut offset = header_end;
    let mut names = HashSet::new();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::format(
                PREAMBLE as u64,
                format!("tensor {:?} has unsupported dtype {:?}", entry.name, entry.dtype),
            ));
        }
        if !names.insert(entry.name.clone()) {
            return Err(Error::format(PREAMBLE as u64, format!("duplicate tensor name {:?}", entry.name)));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let (count, nbytes) = count.ok_or_else(|| {
            Error::format(PREAMBLE as u64, format!("tensor {:?} has invalid shape {:?}", entry.name, entry.shape))
        })?;
        let end = offset
            .checked_add(nbytes)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::format(
                    offset as u64,
                    format!(
                        "truncated payload for tensor {:?}: need {nbytes} bytes, {} available",
                        entry.name,
                        bytes.len() - offset
                    ),
                )
            })?;
        let data: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        debug_assert_eq!(data.len(), count);
        tensors.push(NamedTensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::format(
            offset as u64,
            format!("{} trailing bytes after last payload", bytes.len() - offset),
        ));
    }
    Ok(Container {
        tensors,
        meta: header.meta,
    })
}

pub fn write_container(path: &Path, tensors: &[NamedTensor], meta: &BTreeMap<String, String>) -> Result<()> {
    let bytes = encode_container(tensors, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<(Vec<NamedTensor>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let c = decode_container(&bytes)?;
    Ok((c.tensors, c.meta))
}
