use std::fmt;

use serde::{Deserialize, Serialize};

use super::{pow2, ElementFormat, ScaleFormat};
use crate::error::{Error, Result};

/// A block-scaled format: `block_size` elements share one power-of-two scale.
///
/// `block_size == 1` is an ordinary scalar format with a private scale per
/// value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockFormat {
    pub element: ElementFormat,
    pub scale: ScaleFormat,
    pub block_size: usize,
}

/// Encoded block: one scale code plus one element code per slot. The final
/// block of a tensor row may be shorter than `block_size`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedBlock {
    pub scale_code: u32,
    pub element_codes: Vec<u8>,
}

/// Result of shared-scale selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleChoice {
    pub code: u32,
    pub exponent: i32,
    /// The no-saturation exponent fell outside the scale's range and was
    /// clamped to the nearest boundary.
    pub clamped: bool,
}

impl BlockFormat {
    pub fn new(element: ElementFormat, scale: ScaleFormat, block_size: usize) -> Result<Self> {
        let f = Self {
            element,
            scale,
            block_size,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.element.validate()?;
        self.scale.validate()?;
        if self.block_size == 0 {
            return Err(Error::InvalidFormat("block_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_block_size(self, block_size: usize) -> Self {
        Self { block_size, ..self }
    }

    /// Element width plus the amortized share of the scale bits.
    pub fn bits_per_value(&self) -> f64 {
        self.element.width() as f64 + self.scale.width() as f64 / self.block_size as f64
    }

    /// Canonical `b<block>e<exp>m<man>s<scalebits>` string. Only describes the
    /// format fully when the biases are the conventional ones.
    pub fn spec_string(&self) -> String {
        format!(
            "b{}e{}m{}s{}",
            self.block_size,
            self.element.exponent_bits,
            self.element.mantissa_bits,
            self.scale.exponent_bits
        )
    }

    /// Smallest power of two `s` with `max|v| / s <= element max`. All-zero
    /// blocks get the minimum scale.
    pub fn select_block_scale(&self, values: &[f64]) -> Result<ScaleChoice> {
        if values.is_empty() || values.len() > self.block_size {
            return Err(Error::shape(format!(
                "block of {} values for block_size {}",
                values.len(),
                self.block_size
            )));
        }
        let mut amax = 0.0f64;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite(v));
            }
            amax = amax.max(v.abs());
        }
        let lo = self.scale.min_exponent();
        let hi = self.scale.max_exponent();
        if amax == 0.0 {
            return Ok(ScaleChoice {
                code: self.scale.code_for_exponent(lo),
                exponent: lo,
                clamped: false,
            });
        }
        let emax = self.element.max_value();
        let fits = |e: i32| amax <= emax * pow2(e);
        let mut e = ((amax / emax).log2().ceil() as i32).clamp(lo - 1, hi + 1);
        while e <= hi && !fits(e) {
            e += 1;
        }
        while e >= lo && fits(e - 1) {
            e -= 1;
        }
        let (e, clamped) = if e < lo {
            (lo, true)
        } else if e > hi {
            (hi, true)
        } else {
            (e, false)
        };
        Ok(ScaleChoice {
            code: self.scale.code_for_exponent(e),
            exponent: e,
            clamped,
        })
    }

    /// Encodes a block of values: shared scale first, then each element
    /// rounded to nearest-even at that scale.
    pub fn quantize_block(&self, values: &[f64]) -> Result<(QuantizedBlock, ScaleChoice)> {
        let choice = self.select_block_scale(values)?;
        let block = self.encode_at_scale(values, choice)?;
        Ok((block, choice))
    }

    /// Encodes `values` at an already chosen scale.
    pub fn encode_at_scale(&self, values: &[f64], choice: ScaleChoice) -> Result<QuantizedBlock> {
        let inv = pow2(-choice.exponent);
        let element_codes = values
            .iter()
            .map(|&v| self.element.encode(v * inv))
            .collect::<Result<Vec<u8>>>()?;
        Ok(QuantizedBlock {
            scale_code: choice.code,
            element_codes,
        })
    }

    /// Exact `s_b * p_i` for every slot.
    pub fn dequantize_block(&self, qb: &QuantizedBlock) -> Vec<f64> {
        let s = self.scale.decode(qb.scale_code);
        qb.element_codes
            .iter()
            .map(|&c| s * self.element.decode(c))
            .collect()
    }

    /// Writes the decoded block into `out` without allocating.
    pub(crate) fn dequantize_into(&self, qb: &QuantizedBlock, out: &mut [f64]) {
        let s = self.scale.decode(qb.scale_code);
        for (o, &c) in out.iter_mut().zip(&qb.element_codes) {
            *o = s * self.element.decode(c);
        }
    }
}

impl fmt::Display for BlockFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} x{} / {}", self.element, self.block_size, self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b4int3() -> BlockFormat {
        BlockFormat::new(ElementFormat::INT3, ScaleFormat::E4, 4).unwrap()
    }

    #[test]
    fn scale_for_mixed_block() {
        let c = b4int3().select_block_scale(&[0.0, 2.0, -7.0, 5.0]).unwrap();
        assert_eq!(c.exponent, 2);
        assert!(!c.clamped);
    }

    #[test]
    fn scale_when_max_equals_element_max() {
        let c = b4int3().select_block_scale(&[3.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(c.exponent, 0);
    }

    #[test]
    fn all_zero_block_gets_min_scale() {
        let f = b4int3();
        let (qb, c) = f.quantize_block(&[0.0; 4]).unwrap();
        assert_eq!(c.exponent, -7);
        assert_eq!(qb.scale_code, 0);
        assert_eq!(qb.element_codes, vec![0; 4]);
        assert!(!c.clamped);
    }

    #[test]
    fn quantize_mixed_block() {
        let f = b4int3();
        let (qb, _) = f.quantize_block(&[0.0, 2.0, -7.0, 5.0]).unwrap();
        assert_eq!(f.dequantize_block(&qb), vec![0.0, 0.0, -8.0, 4.0]);
    }

    #[test]
    fn clamps_at_both_ends() {
        let f = b4int3();
        let (qb, c) = f.quantize_block(&[1e6, 0.0, 0.0, 0.0]).unwrap();
        assert!(c.clamped);
        assert_eq!(c.exponent, 8);
        assert_eq!(f.dequantize_block(&qb)[0], 768.0);
        let c = f.select_block_scale(&[1e-6, 0.0, 0.0, 0.0]).unwrap();
        assert!(c.clamped);
        assert_eq!(c.exponent, -7);
    }

    #[test]
    fn representable_block_round_trips() {
        let f = b4int3();
        let v = [0.75, -0.25, 0.5, 0.0];
        let (qb, _) = f.quantize_block(&v).unwrap();
        assert_eq!(f.dequantize_block(&qb), v.to_vec());
    }

    #[test]
    fn block_of_one_matches_private_scale() {
        let f = BlockFormat::new(ElementFormat::FP4_E2M1, ScaleFormat::E8, 1).unwrap();
        for x in [0.3, -5.0, 1e-3, 12345.0] {
            let (qb, c) = f.quantize_block(&[x]).unwrap();
            let expect =
                pow2(c.exponent) * ElementFormat::FP4_E2M1.round(x / pow2(c.exponent)).unwrap();
            assert_eq!(f.dequantize_block(&qb)[0], expect);
        }
    }

    #[test]
    fn bits_per_value() {
        assert_eq!(b4int3().bits_per_value(), 4.0);
        let mx = BlockFormat::new(ElementFormat::INT4, ScaleFormat::E8, 32).unwrap();
        assert_eq!(mx.bits_per_value(), 4.25);
    }

    #[test]
    fn short_and_oversized_blocks() {
        let f = b4int3();
        assert!(f.quantize_block(&[1.0, 2.0]).is_ok());
        assert!(f.quantize_block(&[1.0; 5]).is_err());
        assert!(f.quantize_block(&[]).is_err());
        assert!(matches!(
            f.quantize_block(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}
