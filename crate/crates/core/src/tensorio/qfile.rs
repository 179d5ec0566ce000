//! `.tcq` quantized tensor file.
//!
//! ```text
//! "TCQ1" | u32 LE header length | UTF-8 JSON header | payload
//! ```
//!
//! Per tensor the header records the format (full descriptor plus its
//! `b<block>e<exp>m<man>s<scalebits>` string), shape, block axis, and two
//! payload ranges:
//!
//! - scale codes: one per block in grid order, packed at the scale width;
//! - element codes: every block's codes in grid order, slot order within a
//!   block, packed at the element width.
//!
//! Packing is LSB-first: bit `i` of the stream lives in byte `i / 8` at bit
//! position `i % 8`, and each code contributes its least significant bit
//! first. The final byte of a stream is zero-padded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{check_ranges, split_header};
use crate::error::{Error, Result};
use crate::formats::{BlockFormat, QuantizedBlock, QuantizedTensor};

pub const TCQ_MAGIC: &[u8; 4] = b"TCQ1";

/// Packs `width`-bit codes LSB-first.
pub fn pack_codes(codes: impl IntoIterator<Item = u32>, width: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let mut bit = 0usize;
    for code in codes {
        for i in 0..width {
            if bit.is_multiple_of(8) {
                out.push(0);
            }
            if (code >> i) & 1 == 1 {
                *out.last_mut().unwrap() |= 1 << (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

/// Inverse of [`pack_codes`]; `bytes` must hold at least `count * width` bits.
pub fn unpack_codes(bytes: &[u8], width: u32, count: usize) -> Result<Vec<u32>> {
    let need = (count * width as usize).div_ceil(8);
    if bytes.len() != need {
        return Err(Error::Corrupt(format!(
            "{} code bytes, expected {need}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let mut code = 0u32;
        for i in 0..width {
            if (bytes[bit / 8] >> (bit % 8)) & 1 == 1 {
                code |= 1 << i;
            }
            bit += 1;
        }
        out.push(code);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QEntry {
    format_name: String,
    format: BlockFormat,
    rows: usize,
    cols: usize,
    axis: usize,
    num_blocks: usize,
    scale_bits: u32,
    element_bits: u32,
    scale_offset: u64,
    scale_length: u64,
    element_offset: u64,
    element_length: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QHeader {
    tensors: BTreeMap<String, QEntry>,
}

/// In-memory `.tcq` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuantizedContainer {
    pub tensors: BTreeMap<String, QuantizedTensor>,
}

impl QuantizedContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: QuantizedTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut header = QHeader {
            tensors: BTreeMap::new(),
        };
        for (name, t) in &self.tensors {
            t.validate()?;
            let scale_bits = t.format.scale.width();
            let element_bits = t.format.element.width();
            let scale_offset = payload.len() as u64;
            payload.extend(pack_codes(
                t.blocks.iter().map(|b| b.scale_code),
                scale_bits,
            ));
            let element_offset = payload.len() as u64;
            payload.extend(pack_codes(
                t.blocks
                    .iter()
                    .flat_map(|b| b.element_codes.iter().map(|&c| c as u32)),
                element_bits,
            ));
            header.tensors.insert(
                name.clone(),
                QEntry {
                    format_name: t.format.spec_string(),
                    format: t.format,
                    rows: t.rows,
                    cols: t.cols,
                    axis: t.axis,
                    num_blocks: t.blocks.len(),
                    scale_bits,
                    element_bits,
                    scale_offset,
                    scale_length: element_offset - scale_offset,
                    element_offset,
                    element_length: payload.len() as u64 - element_offset,
                },
            );
        }
        let json = serde_json::to_vec(&header).expect("header serializes");
        let len = u32::try_from(json.len())
            .map_err(|_| Error::Corrupt("header larger than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(TCQ_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (QHeader, &[u8]) = split_header(bytes, TCQ_MAGIC)?;
        let ranges: Vec<(u64, u64)> = header
            .tensors
            .values()
            .flat_map(|e| {
                [
                    (e.scale_offset, e.scale_length),
                    (e.element_offset, e.element_length),
                ]
            })
            .collect();
        check_ranges(&ranges, payload.len())?;
        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            let corrupt = |msg: String| Error::Corrupt(format!("tensor `{name}`: {msg}"));
            e.format
                .validate()
                .map_err(|err| corrupt(err.to_string()))?;
            if e.scale_bits != e.format.scale.width() || e.element_bits != e.format.element.width()
            {
                return Err(corrupt("code widths disagree with format".into()));
            }
            let bs = e.format.block_size;
            let (lines, len) = match e.axis {
                1 => (e.rows, e.cols),
                0 => (e.cols, e.rows),
                a => return Err(corrupt(format!("block axis {a}"))),
            };
            let nb = len.div_ceil(bs);
            if e.num_blocks != lines * nb {
                return Err(corrupt(format!(
                    "{} blocks for grid {lines}x{nb}",
                    e.num_blocks
                )));
            }
            let scale_raw =
                &payload[e.scale_offset as usize..(e.scale_offset + e.scale_length) as usize];
            let elem_raw =
                &payload[e.element_offset as usize..(e.element_offset + e.element_length) as usize];
            let scales = unpack_codes(scale_raw, e.scale_bits, e.num_blocks)?;
            let elems = unpack_codes(elem_raw, e.element_bits, lines * len)?;
            // block b of every line has the same length, so grid order is
            // line-major for axis 1 and block-major for axis 0
            let mut blocks = Vec::with_capacity(e.num_blocks);
            let mut cursor = 0usize;
            for (idx, &scale_code) in scales.iter().enumerate() {
                let b = if e.axis == 1 { idx % nb } else { idx / lines };
                let n = bs.min(len - b * bs);
                let element_codes = elems[cursor..cursor + n].iter().map(|&c| c as u8).collect();
                cursor += n;
                blocks.push(QuantizedBlock {
                    scale_code,
                    element_codes,
                });
            }
            let t = QuantizedTensor {
                format: e.format,
                rows: e.rows,
                cols: e.cols,
                axis: e.axis,
                blocks,
            };
            t.validate().map_err(|err| corrupt(err.to_string()))?;
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
