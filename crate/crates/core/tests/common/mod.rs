#![allow(dead_code)]

use edquant::formats::BlockFormat;
use edquant::{Matrix, QuantizedBlock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = Normal::new(0.0, 1.0).unwrap();
    Matrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

/// `a + eps * noise`: a stand-in for upstream quantization error.
pub fn perturbed(a: &Matrix, eps: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let noise = gauss(a.rows(), a.cols(), rng);
    a.add(&noise.map(|v| v * eps)).unwrap()
}

pub fn same_bits(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// `||x - y|| / ||y||` (absolute when `y` is zero).
pub fn rel_norm(x: &[f64], y: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let n: f64 = y.iter().map(|v| v * v).sum();
    if n == 0.0 {
        d.sqrt()
    } else {
        (d / n).sqrt()
    }
}

/// A matrix whose rows are exactly representable in `fmt` (blocks along
/// columns): random element codes under random in-range scales.
pub fn representable(rows: usize, cols: usize, fmt: &BlockFormat, rng: &mut ChaCha8Rng) -> Matrix {
    let bs = fmt.block_size;
    let mut m = Matrix::zeros(rows, cols);
    let codes = fmt.element.code_count();
    for r in 0..rows {
        for start in (0..cols).step_by(bs) {
            let n = bs.min(cols - start);
            let e = rng.random_range(-4..=4);
            let qb = QuantizedBlock {
                scale_code: fmt.scale.code_for_exponent(e),
                element_codes: (0..n).map(|_| rng.random_range(0..codes) as u8).collect(),
            };
            let vals = fmt.dequantize_block(&qb);
            m.row_mut(r)[start..start + n].copy_from_slice(&vals);
        }
    }
    m
}
