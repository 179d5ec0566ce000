use std::fmt;

use serde::{Deserialize, Serialize};

use super::pow2;
use crate::error::{Error, Result};

/// Bit-level description of a scalar element encoding.
///
/// Codes are laid out as `[sign | exponent | mantissa]` from the most to the
/// least significant bit. `exponent_bits == 0` selects a sign-magnitude
/// integer, in which case the mantissa field is the magnitude. Floating
/// formats have no infinity or NaN encodings: every exponent field value
/// decodes to a finite number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementFormat {
    pub sign_bits: u8,
    pub exponent_bits: u8,
    pub mantissa_bits: u8,
    pub exponent_bias: i32,
    pub has_subnormals: bool,
    pub saturating: bool,
}

impl ElementFormat {
    /// Signed sign-magnitude integer with `magnitude_bits` of magnitude.
    pub const fn int(magnitude_bits: u8) -> Self {
        Self {
            sign_bits: 1,
            exponent_bits: 0,
            mantissa_bits: magnitude_bits,
            exponent_bias: 0,
            has_subnormals: false,
            saturating: true,
        }
    }

    /// Signed minifloat with the conventional bias `2^(e-1) - 1`.
    pub const fn float(exponent_bits: u8, mantissa_bits: u8) -> Self {
        Self {
            sign_bits: 1,
            exponent_bits,
            mantissa_bits,
            exponent_bias: (1 << (exponent_bits - 1)) - 1,
            has_subnormals: true,
            saturating: true,
        }
    }

    pub const INT3: Self = Self::int(2);
    pub const INT4: Self = Self::int(3);
    pub const FP4_E2M1: Self = Self::float(2, 1);
    pub const FP6_E2M3: Self = Self::float(2, 3);
    pub const FP6_E3M2: Self = Self::float(3, 2);

    pub fn width(&self) -> u32 {
        self.sign_bits as u32 + self.exponent_bits as u32 + self.mantissa_bits as u32
    }

    pub fn is_integer(&self) -> bool {
        self.exponent_bits == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.sign_bits > 1 {
            return Err(Error::InvalidFormat(format!(
                "sign_bits must be 0 or 1, got {}",
                self.sign_bits
            )));
        }
        if !(2..=8).contains(&self.width()) {
            return Err(Error::InvalidFormat(format!(
                "element width {} outside [2, 8]",
                self.width()
            )));
        }
        if self.exponent_bits == 0 && self.mantissa_bits == 0 {
            return Err(Error::InvalidFormat("element has no magnitude bits".into()));
        }
        if self.exponent_bias.abs() > 512 {
            return Err(Error::InvalidFormat(format!(
                "exponent bias {} out of supported range",
                self.exponent_bias
            )));
        }
        Ok(())
    }

    fn magnitude_width(&self) -> u32 {
        self.exponent_bits as u32 + self.mantissa_bits as u32
    }

    fn sign_mask(&self) -> u8 {
        if self.sign_bits == 1 {
            1 << self.magnitude_width()
        } else {
            0
        }
    }

    fn min_normal(&self) -> f64 {
        pow2(1 - self.exponent_bias)
    }

    /// Largest representable magnitude.
    pub fn max_value(&self) -> f64 {
        if self.is_integer() {
            ((1u32 << self.mantissa_bits) - 1) as f64
        } else {
            let top = (1i32 << self.exponent_bits) - 1;
            let frac = 2.0 - pow2(-(self.mantissa_bits as i32));
            pow2(top - self.exponent_bias) * frac
        }
    }

    /// Number of distinct bit patterns, `2^width`.
    pub fn code_count(&self) -> u32 {
        1 << self.width()
    }

    /// Exact decoded value of `code`; negative zero decodes to `+0`.
    pub fn decode(&self, code: u8) -> f64 {
        let mag_mask = ((1u32 << self.magnitude_width()) - 1) as u8;
        let negative = code & self.sign_mask() != 0;
        let mag = self.decode_magnitude(code & mag_mask);
        if negative && mag != 0.0 {
            -mag
        } else {
            mag
        }
    }

    fn decode_magnitude(&self, bits: u8) -> f64 {
        if self.is_integer() {
            return bits as f64;
        }
        let m = self.mantissa_bits as i32;
        let ef = (bits >> m) as i32;
        let mf = (bits & ((1u8 << m) - 1)) as f64;
        if ef == 0 {
            if self.has_subnormals {
                pow2(1 - self.exponent_bias - m) * mf
            } else {
                0.0
            }
        } else {
            pow2(ef - self.exponent_bias) * (1.0 + mf * pow2(-m))
        }
    }

    /// Rounds a non-negative finite magnitude to the nearest representable
    /// magnitude, ties to the even code. Returns `None` when the result
    /// exceeds the largest magnitude of a non-saturating format.
    fn round_magnitude(&self, a: f64) -> Option<f64> {
        let max = self.max_value();
        if a >= max {
            return if a == max || self.saturating {
                Some(max)
            } else {
                None
            };
        }
        let q = if self.is_integer() {
            a.round_ties_even()
        } else {
            let m = self.mantissa_bits as i32;
            let min_normal = self.min_normal();
            if a < min_normal {
                if self.has_subnormals && m > 0 {
                    let step = pow2(1 - self.exponent_bias - m);
                    (a / step).round_ties_even() * step
                } else if a > min_normal / 2.0 {
                    min_normal
                } else {
                    0.0
                }
            } else {
                let e = floor_log2(a);
                let step = pow2(e - m);
                if m == 0 {
                    let r = a / step;
                    if r < 1.5 || (r == 1.5 && (e + self.exponent_bias) % 2 == 0) {
                        step
                    } else {
                        2.0 * step
                    }
                } else {
                    (a / step).round_ties_even() * step
                }
            }
        };
        if q > max {
            if self.saturating {
                Some(max)
            } else {
                None
            }
        } else {
            Some(q)
        }
    }

    /// Magnitude bits of an exactly representable magnitude.
    fn magnitude_code(&self, q: f64) -> u8 {
        if q == 0.0 {
            return 0;
        }
        if self.is_integer() {
            return q as u8;
        }
        let m = self.mantissa_bits as i32;
        if q < self.min_normal() {
            // subnormal: ef = 0
            return (q / pow2(1 - self.exponent_bias - m)) as u8;
        }
        let e = floor_log2(q);
        let ef = (e + self.exponent_bias) as u8;
        let mf = ((q / pow2(e) - 1.0) * pow2(m)) as u8;
        (ef << m) | mf
    }

    /// Round-to-nearest-even encode; saturates past the largest magnitude
    /// when `saturating` is set.
    pub fn encode(&self, x: f64) -> Result<u8> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        let negative = x < 0.0;
        if negative && self.sign_bits == 0 {
            // unsigned: clamp to zero
            return Ok(0);
        }
        let q = self
            .round_magnitude(x.abs())
            .ok_or_else(|| Error::Overflow {
                value: x,
                format: self.to_string(),
            })?;
        let bits = self.magnitude_code(q);
        if negative && q != 0.0 {
            Ok(bits | self.sign_mask())
        } else {
            Ok(bits)
        }
    }

    /// Nearest representable value of `x` (encode followed by decode).
    pub fn round(&self, x: f64) -> Result<f64> {
        Ok(self.decode(self.encode(x)?))
    }

    /// All distinct decodable values, ascending.
    pub fn enumerate_values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = (0..self.code_count())
            .map(|c| self.decode(c as u8))
            .collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals
    }
}

impl fmt::Display for ElementFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign_bits == 1 { "" } else { "u" };
        if self.is_integer() {
            write!(f, "{s}int{}", self.width())
        } else {
            write!(
                f,
                "{s}fp{}_e{}m{}",
                self.width(),
                self.exponent_bits,
                self.mantissa_bits
            )
        }
    }
}

/// `floor(log2(a))` for a positive normal f64.
pub(crate) fn floor_log2(a: f64) -> i32 {
    debug_assert!(a > 0.0 && a.is_normal());
    ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
}
