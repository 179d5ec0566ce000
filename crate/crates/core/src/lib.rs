//! Bit-exact emulation of scalar and block-scaled number formats, and the
//! error diffusion (ED) post-training quantization algorithm for small
//! DAG-structured models.
//!
//! - [`formats`]: element / scale / block format descriptors and the codec
//! - [`tensorio`]: dense matrices, deterministic kernels, `.tct` / `.tcq` files
//! - [`graph`]: model DAG, dual-track forward passes, layer-by-layer calibration
//! - [`edcore`]: ED scalar and block passes, low-memory accumulation, RTN and GPFQ
//! - [`metrics`]: error norms, bit budgets, memory accounting, run reports
//! - [`cli`]: the `edquant` command-line frontend

pub mod cli;
pub mod edcore;
pub mod error;
pub mod formats;
pub mod graph;
pub mod metrics;
pub mod tensorio;

pub use error::{Error, Result};
pub use formats::{BlockFormat, ElementFormat, QuantizedBlock, QuantizedTensor, ScaleFormat};
pub use tensorio::Matrix;
