//! Error diffusion (ED) calibration of a single linear layer.
//!
//! A layer is `O = A W^T` with `W` of shape `OFM x IFM` and calibration
//! activations `A` of shape `M x IFM`. Upstream quantization replaces `A`
//! by `Â`; ED walks the input features in order and shifts each weight
//! column so that the layer output tracks the unquantized reference, then
//! (optionally) rounds it to the target format.
//!
//! Two execution modes give the same result up to floating-point
//! reassociation: [`ExecMode::Direct`] keeps the `M x OFM` accumulators,
//! [`ExecMode::LowMemory`] works from Gram scalars and `block_size x OFM`
//! projections only.

mod block;
mod lowmem;
mod scalar;
mod state;

use std::time::{Duration, Instant};

pub use block::ed_block_pass;
pub use lowmem::{l_update_low_memory, BlockProjection, LowMemoryContext};
pub use scalar::ScalarPass;
pub use state::{inherited_error, l_update_direct, project_update, CalibState};

use crate::error::{Error, Result};
use crate::formats::{quantize_tensor_counted, BlockFormat, QuantizedTensor};
use crate::metrics::layer_output_error;
use crate::tensorio::Matrix;

/// Borrowed inputs of one layer calibration.
#[derive(Clone, Copy, Debug)]
pub struct LayerProblem<'a> {
    pub weight: &'a Matrix,
    pub act: &'a Matrix,
    pub act_hat: &'a Matrix,
}

impl<'a> LayerProblem<'a> {
    pub fn new(weight: &'a Matrix, act: &'a Matrix, act_hat: &'a Matrix) -> Result<Self> {
        if act.shape() != act_hat.shape() {
            return Err(Error::shape(format!(
                "activations {:?} vs quantized activations {:?}",
                act.shape(),
                act_hat.shape()
            )));
        }
        if act.cols() != weight.cols() {
            return Err(Error::shape(format!(
                "activations have {} features, weight expects {}",
                act.cols(),
                weight.cols()
            )));
        }
        if weight.rows() == 0 || weight.cols() == 0 || act.rows() == 0 {
            return Err(Error::shape("empty layer or calibration set"));
        }
        for (name, m) in [
            ("weight", weight),
            ("activations", act),
            ("quantized activations", act_hat),
        ] {
            if !m.is_finite() {
                return Err(Error::Config(format!("{name} contain non-finite values")));
            }
        }
        Ok(Self {
            weight,
            act,
            act_hat,
        })
    }

    pub fn ifm(&self) -> usize {
        self.weight.cols()
    }

    pub fn ofm(&self) -> usize {
        self.weight.rows()
    }

    pub fn samples(&self) -> usize {
        self.act.rows()
    }
}

/// What happens to an adjusted column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PassMode {
    /// Round to the target format.
    Quantize,
    /// Keep the adjusted full-precision values (calibrate-only layers).
    UpdateOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Direct,
    #[default]
    LowMemory,
}

#[derive(Clone, Debug)]
pub struct LayerCalibResult {
    /// Realized weights `Ŵ` (dequantized when a format was applied).
    pub weights: Matrix,
    pub quantized: Option<QuantizedTensor>,
    /// `||A W^T - Â W^T||^2`: error before touching the weights.
    pub error_before: f64,
    /// `||A W^T - Â Ŵ^T||^2`.
    pub error_after: f64,
    pub zero_norm_columns: usize,
    pub scale_clamps: usize,
    pub rescales: usize,
    pub elapsed: Duration,
}

pub(crate) fn finish_result(
    problem: &LayerProblem<'_>,
    weights: Matrix,
    quantized: Option<QuantizedTensor>,
    zero_norm_columns: usize,
    scale_clamps: usize,
    rescales: usize,
    started: Instant,
) -> Result<LayerCalibResult> {
    let error_before =
        layer_output_error(problem.act, problem.weight, problem.act_hat, problem.weight)?;
    let error_after = layer_output_error(problem.act, problem.weight, problem.act_hat, &weights)?;
    Ok(LayerCalibResult {
        weights,
        quantized,
        error_before,
        error_after,
        zero_norm_columns,
        scale_clamps,
        rescales,
        elapsed: started.elapsed(),
    })
}

/// Column-at-a-time ED. `fmt` must have block size 1 in quantize mode and
/// is ignored in update-only mode.
pub fn ed_scalar_pass(
    problem: &LayerProblem<'_>,
    fmt: Option<&BlockFormat>,
    mode: PassMode,
    exec: ExecMode,
) -> Result<LayerCalibResult> {
    ScalarPass::new(*problem, fmt, mode, exec)?.finish()
}

/// Quantizes a layer with ED, picking the scalar pass for block size 1.
pub fn ed_quantize(
    problem: &LayerProblem<'_>,
    fmt: &BlockFormat,
    exec: ExecMode,
) -> Result<LayerCalibResult> {
    if fmt.block_size == 1 {
        ed_scalar_pass(problem, Some(fmt), PassMode::Quantize, exec)
    } else {
        ed_block_pass(problem, fmt, PassMode::Quantize, exec)
    }
}

/// GPFQ: ED with no inherited error, i.e. `Â = A`.
pub fn gpfq_pass(
    weight: &Matrix,
    act: &Matrix,
    fmt: &BlockFormat,
    exec: ExecMode,
) -> Result<LayerCalibResult> {
    ed_quantize(&LayerProblem::new(weight, act, act)?, fmt, exec)
}

/// Round-to-nearest with per-block power-of-two scales along IFM.
pub fn rtn_quantize(problem: &LayerProblem<'_>, fmt: &BlockFormat) -> Result<LayerCalibResult> {
    let started = Instant::now();
    let (q, clamps) = quantize_tensor_counted(problem.weight, fmt, 1)?;
    let weights = q.dequantize();
    finish_result(problem, weights, Some(q), 0, clamps, 0, started)
}
