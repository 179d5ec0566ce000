use std::fmt;

use serde::{Deserialize, Serialize};

use super::pow2;
use crate::error::{Error, Result};

/// Power-of-two shared scale: code `c` decodes to `2^(c - bias)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleFormat {
    pub exponent_bits: u8,
    pub exponent_bias: i32,
    /// Optional reserved code that decodes to NaN. Must sit at either end of
    /// the code range.
    pub special_code_nan: Option<u32>,
}

impl Default for ScaleFormat {
    fn default() -> Self {
        Self::E8
    }
}

impl ScaleFormat {
    /// 8-bit exponent, bias 127.
    pub const E8: Self = Self::with_bits(8);
    /// 4-bit exponent, bias 7: exponents `[-7, 8]`.
    pub const E4: Self = Self::with_bits(4);

    pub const fn with_bits(bits: u8) -> Self {
        Self {
            exponent_bits: bits,
            exponent_bias: (1 << (bits - 1)) - 1,
            special_code_nan: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.exponent_bits) {
            return Err(Error::InvalidFormat(format!(
                "scale exponent bits {} outside [1, 16]",
                self.exponent_bits
            )));
        }
        let top = self.max_raw_code();
        if let Some(nan) = self.special_code_nan {
            if nan != 0 && nan != top {
                return Err(Error::InvalidFormat(format!(
                    "NaN scale code {nan} must be 0 or {top}"
                )));
            }
        }
        if self.min_exponent() < -1000 || self.max_exponent() > 1000 {
            return Err(Error::InvalidFormat("scale exponent range too wide".into()));
        }
        if self.min_code() > self.max_code() {
            return Err(Error::InvalidFormat("scale has no usable codes".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.exponent_bits as u32
    }

    fn max_raw_code(&self) -> u32 {
        (1u32 << self.exponent_bits) - 1
    }

    pub fn min_code(&self) -> u32 {
        if self.special_code_nan == Some(0) {
            1
        } else {
            0
        }
    }

    pub fn max_code(&self) -> u32 {
        let top = self.max_raw_code();
        if self.special_code_nan == Some(top) {
            top - 1
        } else {
            top
        }
    }

    pub fn min_exponent(&self) -> i32 {
        self.min_code() as i32 - self.exponent_bias
    }

    pub fn max_exponent(&self) -> i32 {
        self.max_code() as i32 - self.exponent_bias
    }

    /// Code for an exponent already inside `[min_exponent, max_exponent]`.
    pub fn code_for_exponent(&self, e: i32) -> u32 {
        debug_assert!((self.min_exponent()..=self.max_exponent()).contains(&e));
        (e + self.exponent_bias) as u32
    }

    pub fn exponent_of(&self, code: u32) -> Option<i32> {
        if Some(code) == self.special_code_nan || code > self.max_raw_code() {
            None
        } else {
            Some(code as i32 - self.exponent_bias)
        }
    }

    /// Decoded scale; NaN for the reserved code or an out-of-width code.
    pub fn decode(&self, code: u32) -> f64 {
        match self.exponent_of(code) {
            Some(e) => pow2(e),
            None => f64::NAN,
        }
    }

    /// Number of usable (non-NaN) scale codes.
    pub fn code_count(&self) -> u32 {
        self.max_code() - self.min_code() + 1
    }
}

impl fmt::Display for ScaleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}(bias {})", self.exponent_bits, self.exponent_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e4_window() {
        let s = ScaleFormat::E4;
        assert_eq!(s.min_exponent(), -7);
        assert_eq!(s.max_exponent(), 8);
        assert_eq!(s.code_count(), 16);
        assert_eq!(s.decode(0), 1.0 / 128.0);
        assert_eq!(s.decode(15), 256.0);
    }

    #[test]
    fn e8_window_and_nan() {
        let s = ScaleFormat::E8;
        assert_eq!(s.min_exponent(), -127);
        assert_eq!(s.max_exponent(), 128);
        let ocp = ScaleFormat {
            special_code_nan: Some(255),
            ..ScaleFormat::E8
        };
        ocp.validate().unwrap();
        assert_eq!(ocp.max_exponent(), 127);
        assert!(ocp.decode(255).is_nan());
        assert_eq!(ocp.decode(127), 1.0);
    }

    #[test]
    fn nan_code_in_middle_rejected() {
        let s = ScaleFormat {
            special_code_nan: Some(3),
            ..ScaleFormat::E4
        };
        assert!(s.validate().is_err());
    }
}
