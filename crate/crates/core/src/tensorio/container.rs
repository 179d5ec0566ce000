//! `.tct` tensor container.
//!
//! ```text
//! "TCT1" | u32 LE manifest length | UTF-8 JSON manifest | payload
//! ```
//!
//! The manifest is `{"tensors": {name: {dtype, shape, offset, length}}}` with
//! offsets relative to the start of the payload. Values are little-endian
//! IEEE 754. Writers emit tensors in name order, packed back to back, so a
//! container always serializes to the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const TCT_MAGIC: &[u8; 4] = b"TCT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Rounds `v` to what this dtype stores.
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

/// A named-less dense tensor. Values are held as `f64`; an `F32` tensor only
/// ever holds `f32`-representable values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub dtype: DType,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*v));
        }
        let data = data.into_iter().map(|v| dtype.round(v)).collect();
        Ok(Self { shape, dtype, data })
    }

    pub fn from_matrix(m: &Matrix, dtype: DType) -> Result<Self> {
        Self::new(vec![m.rows(), m.cols()], dtype, m.data().to_vec())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rank-2 view; a rank-1 tensor becomes a single row. Higher ranks fold
    /// all leading dimensions into rows.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [] => Err(Error::shape("scalar tensor has no matrix view")),
            [n] => Matrix::from_vec(1, *n, self.data.clone()),
            dims => {
                let cols = *dims.last().unwrap();
                let rows = dims[..dims.len() - 1].iter().product();
                Matrix::from_vec(rows, cols, self.data.clone())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: BTreeMap<String, ManifestEntry>,
}

/// In-memory `.tct` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: BTreeMap<String, DenseTensor>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DenseTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Graph(format!("tensor `{name}` not found in container")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut manifest = Manifest {
            tensors: BTreeMap::new(),
        };
        for (name, t) in &self.tensors {
            let offset = payload.len() as u64;
            for &v in &t.data {
                match t.dtype {
                    DType::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                }
            }
            manifest.tensors.insert(
                name.clone(),
                ManifestEntry {
                    dtype: t.dtype,
                    shape: t.shape.clone(),
                    offset,
                    length: payload.len() as u64 - offset,
                },
            );
        }
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let len = u32::try_from(json.len())
            .map_err(|_| Error::Corrupt("manifest larger than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(TCT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, payload): (Manifest, &[u8]) = split_header(bytes, TCT_MAGIC)?;
        let ranges: Vec<(u64, u64)> = manifest
            .tensors
            .values()
            .map(|e| (e.offset, e.length))
            .collect();
        check_ranges(&ranges, payload.len())?;
        let mut tensors = BTreeMap::new();
        for (name, e) in manifest.tensors {
            let numel: usize = e.shape.iter().product();
            if (numel * e.dtype.size()) as u64 != e.length {
                return Err(Error::Corrupt(format!(
                    "tensor `{name}`: {} bytes for shape {:?} of {:?}",
                    e.length, e.shape, e.dtype
                )));
            }
            let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
            let data: Vec<f64> = match e.dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            let t = DenseTensor::new(e.shape, e.dtype, data)
                .map_err(|err| Error::Corrupt(format!("tensor `{name}`: {err}")))?;
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Parses `magic | u32 LE length | JSON header` and returns the header with
/// the remaining payload.
pub(crate) fn split_header<'a, T: serde::de::DeserializeOwned>(
    bytes: &'a [u8],
    magic: &[u8; 4],
) -> Result<(T, &'a [u8])> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::Corrupt(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let end = 8usize
        .checked_add(len)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("truncated header".into()))?;
    let header = serde_json::from_slice(&bytes[8..end])
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    Ok((header, &bytes[end..]))
}

/// Byte ranges must lie inside the payload, not overlap, and cover it with
/// no trailing bytes.
pub(crate) fn check_ranges(ranges: &[(u64, u64)], payload_len: usize) -> Result<()> {
    let mut sorted: Vec<(u64, u64)> = ranges.to_vec();
    sorted.sort_unstable();
    let mut cursor = 0u64;
    for &(off, len) in &sorted {
        let end = off
            .checked_add(len)
            .ok_or_else(|| Error::Corrupt("range overflows".into()))?;
        if end > payload_len as u64 {
            return Err(Error::Corrupt(format!(
                "truncated payload: range {off}..{end} beyond {payload_len} bytes"
            )));
        }
        if off < cursor {
            return Err(Error::Corrupt(format!(
                "overlapping ranges at offset {off}"
            )));
        }
        cursor = end;
    }
    if cursor != payload_len as u64 {
        return Err(Error::Corrupt(format!(
            "{} unreferenced trailing payload bytes",
            payload_len as u64 - cursor
        )));
    }
    Ok(())
}
