//! Error norms, bit budgets, memory accounting and run reports.

mod report;

pub use report::{CalibReport, EndToEndReport, LayerReport, RunEcho};

use crate::edcore::ExecMode;
use crate::error::{Error, Result};
use crate::formats::BlockFormat;
use crate::tensorio::{dot, Matrix};

/// `||A W^T - Â Ŵ^T||^2`, streamed one output row at a time.
pub fn layer_output_error(
    act: &Matrix,
    weight: &Matrix,
    act_hat: &Matrix,
    weight_hat: &Matrix,
) -> Result<f64> {
    if act.shape() != act_hat.shape()
        || weight.shape() != weight_hat.shape()
        || act.cols() != weight.cols()
    {
        return Err(Error::shape(format!(
            "layer error: A {:?}, W {:?}, Â {:?}, Ŵ {:?}",
            act.shape(),
            weight.shape(),
            act_hat.shape(),
            weight_hat.shape()
        )));
    }
    let mut acc = 0.0;
    for i in 0..act.rows() {
        for j in 0..weight.rows() {
            let d = dot(act.row(i), weight.row(j)) - dot(act_hat.row(i), weight_hat.row(j));
            acc += d * d;
        }
    }
    Ok(acc)
}

/// `||X - Y||^2` over all entries.
pub fn squared_error(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "squared error: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in x.data().iter().zip(y.data()) {
        acc += (a - b) * (a - b);
    }
    Ok(acc)
}

/// Element bits plus the block's scale bits spread over its values.
pub fn bits_per_weight(fmt: &BlockFormat) -> f64 {
    fmt.bits_per_value()
}

/// Ratio of a quantized-model task metric to its full-precision baseline
/// (e.g. top-1 quantized / top-1 baseline).
pub fn normalized_metric(quantized: f64, baseline: f64) -> Result<f64> {
    if !quantized.is_finite() || !baseline.is_finite() || baseline == 0.0 {
        return Err(Error::Config(format!(
            "cannot normalize {quantized} by baseline {baseline}"
        )));
    }
    Ok(quantized / baseline)
}

/// Peak accumulator bytes of one layer calibration.
///
/// Direct keeps three `M x OFM` matrices; low memory keeps one
/// `block_size x OFM` projection. `ifm` only bounds `block_size`.
pub fn memory_footprint(
    m: u64,
    ofm: u64,
    ifm: u64,
    block_size: u64,
    strategy: ExecMode,
    bytes_per_value: u64,
) -> Result<u64> {
    if m == 0 || ofm == 0 || ifm == 0 || block_size == 0 || bytes_per_value == 0 {
        return Err(Error::Config(
            "memory footprint needs positive dimensions".into(),
        ));
    }
    let overflow = || Error::Config("memory footprint overflows u64".into());
    match strategy {
        ExecMode::Direct => 3u64
            .checked_mul(m)
            .and_then(|v| v.checked_mul(ofm))
            .and_then(|v| v.checked_mul(bytes_per_value))
            .ok_or_else(overflow),
        ExecMode::LowMemory => block_size
            .min(ifm)
            .checked_mul(ofm)
            .and_then(|v| v.checked_mul(bytes_per_value))
            .ok_or_else(overflow),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::lookup;
    use crate::tensorio::matmul;

    #[test]
    fn large_layer_memory_example() {
        let m = 256 * 2048;
        let d = memory_footprint(m, 8192, 8192, 32, ExecMode::Direct, 4).unwrap();
        assert_eq!(d, 3 << 34);
        let l = memory_footprint(m, 8192, 8192, 32, ExecMode::LowMemory, 4).unwrap();
        assert_eq!(l, 1 << 20);
        assert_eq!(
            memory_footprint(1, 1, 1, 1, ExecMode::Direct, 4).unwrap(),
            12
        );
        assert!(memory_footprint(u64::MAX, 2, 1, 1, ExecMode::Direct, 4).is_err());
        assert!(memory_footprint(0, 2, 1, 1, ExecMode::Direct, 4).is_err());
    }

    #[test]
    fn bit_budgets() {
        assert_eq!(bits_per_weight(&lookup("b4int3").unwrap().as_block()), 4.0);
        assert_eq!(bits_per_weight(&lookup("mxint4").unwrap().as_block()), 4.25);
        assert_eq!(
            bits_per_weight(&lookup("fp4_e2m1").unwrap().as_block()),
            12.0
        );
    }

    #[test]
    fn layer_error_cases() {
        let a = Matrix::from_fn(5, 3, |r, c| (r as f64 - 2.0) * 0.5 + c as f64);
        let w = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64 * 0.25 - 0.7);
        assert_eq!(layer_output_error(&a, &w, &a, &w).unwrap(), 0.0);
        let out = matmul(&a, &w.transpose()).unwrap();
        let expect: f64 = out.data().iter().map(|v| v * v).sum();
        let e = layer_output_error(&a, &w, &a, &Matrix::zeros(2, 3)).unwrap();
        assert!((e - expect).abs() <= 1e-12 * expect);
        assert!(layer_output_error(&a, &w, &a, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn normalized_ratio() {
        assert_eq!(normalized_metric(0.75, 0.8).unwrap(), 0.75 / 0.8);
        assert!(normalized_metric(0.5, 0.0).is_err());
    }
}
