use serde::{Deserialize, Serialize};

use super::{BlockFormat, QuantizedBlock};
use crate::error::{Error, Result};
use crate::tensorio::Matrix;

/// A matrix encoded as a grid of [`QuantizedBlock`]s.
///
/// With `axis == 1` blocks run along each row (the reduction axis of an
/// `OFM x IFM` weight) and the grid is `rows x ceil(cols / block_size)`.
/// With `axis == 0` blocks run down each column and the grid is
/// `ceil(rows / block_size) x cols`. The grid is stored row-major either way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub format: BlockFormat,
    pub rows: usize,
    pub cols: usize,
    pub axis: usize,
    pub blocks: Vec<QuantizedBlock>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl QuantizedTensor {
    /// Length of the blocked dimension.
    pub fn axis_len(&self) -> usize {
        if self.axis == 1 {
            self.cols
        } else {
            self.rows
        }
    }

    pub fn blocks_per_line(&self) -> usize {
        ceil_div(self.axis_len(), self.format.block_size)
    }

    fn block_index(&self, line: usize, b: usize) -> usize {
        if self.axis == 1 {
            line * self.blocks_per_line() + b
        } else {
            b * self.cols + line
        }
    }

    pub fn block(&self, line: usize, b: usize) -> &QuantizedBlock {
        &self.blocks[self.block_index(line, b)]
    }

    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        if self.axis > 1 {
            return Err(Error::shape(format!(
                "block axis {} not in {{0, 1}}",
                self.axis
            )));
        }
        let lines = if self.axis == 1 { self.rows } else { self.cols };
        let nb = self.blocks_per_line();
        if self.blocks.len() != lines * nb {
            return Err(Error::shape(format!(
                "{} blocks for a {}x{} grid",
                self.blocks.len(),
                lines,
                nb
            )));
        }
        let bs = self.format.block_size;
        let width = self.format.element.width();
        for line in 0..lines {
            for b in 0..nb {
                let want = bs.min(self.axis_len() - b * bs);
                let blk = self.block(line, b);
                if blk.element_codes.len() != want {
                    return Err(Error::shape(format!(
                        "block ({line}, {b}) has {} codes, expected {want}",
                        blk.element_codes.len()
                    )));
                }
                if blk.element_codes.iter().any(|&c| (c as u32) >> width != 0) {
                    return Err(Error::Corrupt(format!(
                        "element code wider than {width} bits"
                    )));
                }
                if self.format.scale.exponent_of(blk.scale_code).is_none() {
                    return Err(Error::Corrupt(format!(
                        "invalid scale code {}",
                        blk.scale_code
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dequantize(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        let bs = self.format.block_size;
        let nb = self.blocks_per_line();
        let mut buf = vec![0.0; bs];
        let lines = if self.axis == 1 { self.rows } else { self.cols };
        for line in 0..lines {
            for b in 0..nb {
                let blk = self.block(line, b);
                let n = blk.element_codes.len();
                self.format.dequantize_into(blk, &mut buf[..n]);
                for (i, &v) in buf[..n].iter().enumerate() {
                    let pos = b * bs + i;
                    if self.axis == 1 {
                        out[(line, pos)] = v;
                    } else {
                        out[(pos, line)] = v;
                    }
                }
            }
        }
        out
    }
}

/// Block quantization of a whole matrix, see [`QuantizedTensor`] for layout.
/// A trailing partial block along `axis` is scaled on its own.
pub fn quantize_tensor(t: &Matrix, fmt: &BlockFormat, axis: usize) -> Result<QuantizedTensor> {
    quantize_tensor_counted(t, fmt, axis).map(|(q, _)| q)
}

/// Like [`quantize_tensor`], also returning the number of blocks whose scale
/// was clamped.
pub fn quantize_tensor_counted(
    t: &Matrix,
    fmt: &BlockFormat,
    axis: usize,
) -> Result<(QuantizedTensor, usize)> {
    fmt.validate()?;
    if axis > 1 {
        return Err(Error::shape(format!("block axis {axis} not in {{0, 1}}")));
    }
    let (lines, len) = if axis == 1 {
        (t.rows(), t.cols())
    } else {
        (t.cols(), t.rows())
    };
    let bs = fmt.block_size;
    let nb = ceil_div(len, bs);
    let mut blocks = vec![
        QuantizedBlock {
            scale_code: 0,
            element_codes: Vec::new()
        };
        lines * nb
    ];
    let mut clamps = 0;
    let mut buf = Vec::with_capacity(bs);
    for line in 0..lines {
        for b in 0..nb {
            buf.clear();
            for pos in b * bs..(b * bs + bs).min(len) {
                buf.push(if axis == 1 {
                    t[(line, pos)]
                } else {
                    t[(pos, line)]
                });
            }
            let (qb, choice) = fmt.quantize_block(&buf)?;
            clamps += choice.clamped as usize;
            let idx = if axis == 1 {
                line * nb + b
            } else {
                b * t.cols() + line
            };
            blocks[idx] = qb;
        }
    }
    Ok((
        QuantizedTensor {
            format: *fmt,
            rows: t.rows(),
            cols: t.cols(),
            axis,
            blocks,
        },
        clamps,
    ))
}
