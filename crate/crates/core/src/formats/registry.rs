use std::fmt;

use super::{BlockFormat, ElementFormat, FormatStats, ScaleFormat};
use crate::error::{Error, Result};

/// Canonical registry names, in listing order.
pub const REGISTRY_NAMES: &[&str] = &[
    "int3",
    "int4",
    "fp4_e2m1",
    "fp6_e2m3",
    "fp6_e3m2",
    "b4int3",
    "mxint3",
    "mxint4",
    "mxfp4",
    "mxfp6_e2m3",
    "mxfp6_e3m2",
];

const MX_BLOCK: usize = 32;

/// A registry entry: a bare element encoding or a block-scaled format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatSpec {
    Element(ElementFormat),
    Block(BlockFormat),
}

impl FormatSpec {
    /// Block view used for quantization. A bare element format becomes a
    /// block of one with the default 8-bit power-of-two scale.
    pub fn as_block(&self) -> BlockFormat {
        match *self {
            FormatSpec::Element(element) => BlockFormat {
                element,
                scale: ScaleFormat::default(),
                block_size: 1,
            },
            FormatSpec::Block(b) => b,
        }
    }

    pub fn stats(&self) -> FormatStats {
        match self {
            FormatSpec::Element(e) => e.stats(),
            FormatSpec::Block(b) => b.stats(),
        }
    }

    pub fn enumerate_values(&self) -> Vec<f64> {
        match self {
            FormatSpec::Element(e) => e.enumerate_values(),
            FormatSpec::Block(b) => b.enumerate_values(),
        }
    }
}

impl fmt::Display for FormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatSpec::Element(e) => write!(f, "{e}"),
            FormatSpec::Block(b) => write!(f, "{b}"),
        }
    }
}

/// Resolves a registry name or a `b<block>e<exp>m<man>s<scalebits>` string.
pub fn lookup(name: &str) -> Result<FormatSpec> {
    let block = |element, scale, block_size| {
        FormatSpec::Block(BlockFormat {
            element,
            scale,
            block_size,
        })
    };
    let spec = match name {
        "int3" => FormatSpec::Element(ElementFormat::INT3),
        "int4" => FormatSpec::Element(ElementFormat::INT4),
        "fp4_e2m1" | "fp4" => FormatSpec::Element(ElementFormat::FP4_E2M1),
        "fp6_e2m3" => FormatSpec::Element(ElementFormat::FP6_E2M3),
        "fp6_e3m2" => FormatSpec::Element(ElementFormat::FP6_E3M2),
        "b4int3" => block(ElementFormat::INT3, ScaleFormat::E4, 4),
        "mxint3" => block(ElementFormat::INT3, ScaleFormat::E8, MX_BLOCK),
        "mxint4" => block(ElementFormat::INT4, ScaleFormat::E8, MX_BLOCK),
        "mxfp4" => block(ElementFormat::FP4_E2M1, ScaleFormat::E8, MX_BLOCK),
        "mxfp6_e2m3" => block(ElementFormat::FP6_E2M3, ScaleFormat::E8, MX_BLOCK),
        "mxfp6_e3m2" => block(ElementFormat::FP6_E3M2, ScaleFormat::E8, MX_BLOCK),
        other => match parse_block_spec(other) {
            Ok(b) => FormatSpec::Block(b),
            Err(_) => return Err(Error::UnknownFormat(other.to_string())),
        },
    };
    Ok(spec)
}

fn take_number(s: &str, tag: char) -> Result<(u32, &str)> {
    let bad = || Error::InvalidFormat(format!("malformed format spec near `{s}`"));
    let rest = s.strip_prefix(tag).ok_or_else(bad)?;
    let end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    if end == 0 {
        return Err(bad());
    }
    let n = rest[..end].parse().map_err(|_| bad())?;
    Ok((n, &rest[end..]))
}

/// Parses `b<block>e<exp>m<man>s<scalebits>`. `e0` gives a sign-magnitude
/// integer element; otherwise a minifloat with bias `2^(e-1) - 1`, subnormals
/// and saturation. The scale bias is `2^(s-1) - 1`.
pub fn parse_block_spec(s: &str) -> Result<BlockFormat> {
    let (block, rest) = take_number(s, 'b')?;
    let (exp, rest) = take_number(rest, 'e')?;
    let (man, rest) = take_number(rest, 'm')?;
    let (sbits, rest) = take_number(rest, 's')?;
    if !rest.is_empty() {
        return Err(Error::InvalidFormat(format!("trailing `{rest}` in `{s}`")));
    }
    if exp > 7 || man > 7 || !(1..=16).contains(&sbits) {
        return Err(Error::InvalidFormat(format!("field out of range in `{s}`")));
    }
    let element = if exp == 0 {
        ElementFormat::int(man as u8)
    } else {
        ElementFormat::float(exp as u8, man as u8)
    };
    BlockFormat::new(element, ScaleFormat::with_bits(sbits as u8), block as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_registry_names_resolve_and_validate() {
        for name in REGISTRY_NAMES {
            let f = lookup(name).unwrap();
            f.as_block().validate().unwrap();
        }
    }

    #[test]
    fn spec_strings() {
        let b = parse_block_spec("b4e0m2s4").unwrap();
        assert_eq!(FormatSpec::Block(b), lookup("b4int3").unwrap());
        let mx = parse_block_spec("b32e2m1s8").unwrap();
        assert_eq!(FormatSpec::Block(mx), lookup("mxfp4").unwrap());
        assert_eq!(mx.spec_string(), "b32e2m1s8");
        assert!(parse_block_spec("b4e0m2").is_err());
        assert!(parse_block_spec("b0e0m3s8").is_err());
        assert!(parse_block_spec("b4e0m2s4x").is_err());
        assert!(matches!(lookup("int9"), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn element_lifts_to_block_of_one() {
        let b = lookup("fp4_e2m1").unwrap().as_block();
        assert_eq!(b.block_size, 1);
        assert_eq!(b.bits_per_value(), 12.0);
    }
}
