//! Scalar and block-scaled number formats.
//!
//! Every decoded block value is `s_b * p_i`: a power-of-two shared scale
//! times a privately encoded element. Because the scale is a power of two,
//! all decodes are exact in `f64`.

mod block;
mod element;
mod registry;
mod scale;
mod stats;
mod tensor;

pub use block::{BlockFormat, QuantizedBlock, ScaleChoice};
pub use element::ElementFormat;
pub use registry::{lookup, parse_block_spec, FormatSpec, REGISTRY_NAMES};
pub use scale::ScaleFormat;
pub use stats::FormatStats;
pub use tensor::{quantize_tensor, quantize_tensor_counted, QuantizedTensor};

/// Exact `2^e` for exponents in the normal f64 range.
pub(crate) fn pow2(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if (-1074..-1022).contains(&e) {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        2f64.powi(e)
    }
}
