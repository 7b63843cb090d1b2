//! Single-file weight container.
//!
//! Layout is the common tensor-archive format: an unsigned 64-bit
//! little-endian header length, that many bytes of JSON mapping tensor names
//! to `{dtype, shape, data_offsets}`, then the raw tensor bytes. Offsets are
//! relative to the start of the data section. Only little-endian f32 payloads
//! are supported.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("container io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("container header json: {0}")]
    HeaderJson(#[from] serde_json::Error),
    #[error("unsupported dtype {dtype} for tensor {name}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("tensor {0} not found in container")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expect:?}")]
    TensorShape {
        name: String,
        got: Vec<usize>,
        expect: Vec<usize>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// An in-memory set of named f32 tensors with serialization to and from the
/// container format. Uses a `BTreeMap` so exports are byte-identical across
/// runs regardless of insertion order.
#[derive(Debug, Default, Clone)]
pub struct TensorArchive {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Fetch and shape-check in one step; loaders use this for every weight.
    pub fn get_shaped(&self, name: &str, expect: &[usize]) -> Result<&Tensor, ContainerError> {
        let t = self.get(name)?;
        if t.shape() != expect {
            return Err(ContainerError::TensorShape {
                name: name.to_string(),
                got: t.shape().to_vec(),
                expect: expect.to_vec(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = BTreeMap::new();
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let nbytes = t.data().len() * 4;
            header.insert(
                name.clone(),
                HeaderEntry {
                    dtype: "F32".to_string(),
                    shape: t.shape().to_vec(),
                    data_offsets: [offset, offset + nbytes],
                },
            );
            offset += nbytes;
        }
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header_json.len() + offset);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 8 {
            return Err(ContainerError::Malformed(
                "shorter than the 8-byte length prefix".into(),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let data_start = 8usize
            .checked_add(header_len)
            .filter(|&s| s <= bytes.len())
            .ok_or_else(|| {
                ContainerError::Malformed(format!(
                    "header length {header_len} exceeds file size {}",
                    bytes.len()
                ))
            })?;
        let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&bytes[8..data_start])?;
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for (name, entry) in header {
            if entry.dtype != "F32" {
                return Err(ContainerError::UnsupportedDtype {
                    name,
                    dtype: entry.dtype,
                });
            }
            let [begin, end] = entry.data_offsets;
            if begin > end || end > data.len() {
                return Err(ContainerError::Malformed(format!(
                    "tensor {name} offsets [{begin}, {end}) outside data section of {} bytes",
                    data.len()
                )));
            }
            let expect: usize = entry.shape.iter().product();
            if end - begin != expect * 4 {
                return Err(ContainerError::Malformed(format!(
                    "tensor {name}: {} bytes for shape {:?}",
                    end - begin,
                    entry.shape
                )));
            }
            let values: Vec<f32> = data[begin..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape.clone(), values).map_err(|_| {
                ContainerError::Malformed(format!("tensor {name} shape {:?}", entry.shape))
            })?;
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
