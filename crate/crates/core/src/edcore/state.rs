use std::ops::Range;

use super::LayerProblem;
use crate::error::{Error, Result};
use crate::tensorio::{matmul_bt, Matrix};

/// `(A - Â) W^T`: the output error a layer inherits from upstream
/// quantization.
pub fn inherited_error(act: &Matrix, act_hat: &Matrix, weight: &Matrix) -> Result<Matrix> {
    matmul_bt(&act.sub(act_hat)?, weight)
}

/// Full-size diffusion accumulators of the direct execution mode.
///
/// `running` holds the update carried into the current block (or column):
/// `U^(b-1) = sum over earlier blocks of (share * Õ + E_block)`.
#[derive(Clone, Debug)]
pub struct CalibState {
    pub inherited: Matrix,
    pub running: Matrix,
    ifm: usize,
}

impl CalibState {
    pub fn new(problem: &LayerProblem<'_>) -> Result<Self> {
        let inherited = inherited_error(problem.act, problem.act_hat, problem.weight)?;
        let running = Matrix::zeros(inherited.rows(), inherited.cols());
        Ok(Self {
            inherited,
            running,
            ifm: problem.ifm(),
        })
    }

    pub fn ifm(&self) -> usize {
        self.ifm
    }

    /// Fraction of `Õ` assigned to a block: `len / IFM`, i.e.
    /// `1 / (IFM / block_size)` for full blocks and `1 / IFM` for columns.
    pub fn share(&self, block: &Range<usize>) -> f64 {
        block.len() as f64 / self.ifm as f64
    }

    /// `share * Õ + U^(b-1)`.
    pub fn carried(&self, block: &Range<usize>) -> Matrix {
        let share = self.share(block);
        let mut c = self.running.clone();
        for (cv, ov) in c.data_mut().iter_mut().zip(self.inherited.data()) {
            *cv += ov * share;
        }
        c
    }

    /// Closes a block: `U^(b) = share * Õ + E_block + U^(b-1)` with the
    /// realized block error `E_block = sum_k Â_k (W_k - Ŵ_k)^T`.
    pub fn fold_block(
        &mut self,
        act_hat: &Matrix,
        weight: &Matrix,
        weight_hat: &Matrix,
        block: Range<usize>,
    ) {
        let mut c = self.carried(&block);
        for k in block {
            add_column_error(&mut c, act_hat, weight, weight_hat, k);
        }
        self.running = c;
    }
}

/// `acc += Â_k (W_k - Ŵ_k)^T`, row by row.
pub(crate) fn add_column_error(
    acc: &mut Matrix,
    act_hat: &Matrix,
    weight: &Matrix,
    weight_hat: &Matrix,
    k: usize,
) {
    let ofm = weight.rows();
    let delta: Vec<f64> = (0..ofm)
        .map(|j| weight[(j, k)] - weight_hat[(j, k)])
        .collect();
    for i in 0..acc.rows() {
        let a = act_hat[(i, k)];
        for (cv, d) in acc.row_mut(i).iter_mut().zip(&delta) {
            *cv += a * d;
        }
    }
}

/// Literal `l_update` for column `l` of `block`:
/// `share * Õ + U^(b-1) + sum_{k in block, k != l} Â_k (W_k - Ŵ_k)^T`,
/// an `M x OFM` matrix.
pub fn l_update_direct(
    state: &CalibState,
    act_hat: &Matrix,
    weight: &Matrix,
    weight_hat: &Matrix,
    block: Range<usize>,
    l: usize,
) -> Result<Matrix> {
    if !block.contains(&l) || block.end > weight.cols() {
        return Err(Error::shape(format!(
            "column {l} / block {block:?} outside IFM {}",
            weight.cols()
        )));
    }
    if act_hat.rows() != state.running.rows() || weight.rows() != state.running.cols() {
        return Err(Error::shape("state does not match layer shapes"));
    }
    let mut u = state.carried(&block);
    for k in block.filter(|&k| k != l) {
        add_column_error(&mut u, act_hat, weight, weight_hat, k);
    }
    Ok(u)
}

/// `Â_l^T u / ||Â_l||^2` for an `M x OFM` update `u`; summed over rows in
/// index order.
pub fn project_update(act_hat: &Matrix, u: &Matrix, l: usize, norm: f64) -> Vec<f64> {
    let mut acc = vec![0.0; u.cols()];
    for i in 0..u.rows() {
        let a = act_hat[(i, l)];
        for (s, v) in acc.iter_mut().zip(u.row(i)) {
            *s += a * v;
        }
    }
    acc.into_iter().map(|s| s / norm).collect()
}
