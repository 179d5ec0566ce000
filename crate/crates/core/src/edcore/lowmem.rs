use std::ops::Range;

use super::state::{project_update, CalibState};
use super::LayerProblem;
use crate::error::{Error, Result};
use crate::tensorio::{dot, Matrix};

/// Column-major views of a layer's activations for the low-memory path.
///
/// Everything here is `IFM x M` or smaller; nothing of size `M x OFM` is ever
/// formed. The inherited error enters only through its projections
/// `Â_l^T Õ = (Â_l^T (A - Â)) W^T`.
pub struct LowMemoryContext<'a> {
    weight: &'a Matrix,
    act_hat_cols: Matrix,
    diff_cols: Matrix,
    norms: Vec<f64>,
    inherited_zero: bool,
}

impl<'a> LowMemoryContext<'a> {
    pub fn new(problem: &LayerProblem<'a>) -> Result<Self> {
        let act_hat_cols = problem.act_hat.transpose();
        let diff_cols = problem.act.sub(problem.act_hat)?.transpose();
        let norms = (0..act_hat_cols.rows())
            .map(|k| dot(act_hat_cols.row(k), act_hat_cols.row(k)))
            .collect();
        let inherited_zero = diff_cols.data().iter().all(|v| *v == 0.0);
        Ok(Self {
            weight: problem.weight,
            act_hat_cols,
            diff_cols,
            norms,
            inherited_zero,
        })
    }

    pub fn ifm(&self) -> usize {
        self.act_hat_cols.rows()
    }

    /// `||Â_k||^2`.
    pub fn norm(&self, k: usize) -> f64 {
        self.norms[k]
    }

    /// `Â_l^T Â_k`.
    pub fn gram(&self, l: usize, k: usize) -> f64 {
        dot(self.act_hat_cols.row(l), self.act_hat_cols.row(k))
    }

    /// `Â_l^T Õ` as an OFM vector.
    pub fn inherited_projection(&self, l: usize) -> Vec<f64> {
        let ofm = self.weight.rows();
        if self.inherited_zero {
            return vec![0.0; ofm];
        }
        let al = self.act_hat_cols.row(l);
        let d: Vec<f64> = (0..self.ifm())
            .map(|m| dot(al, self.diff_cols.row(m)))
            .collect();
        (0..ofm).map(|j| dot(&d, self.weight.row(j))).collect()
    }

    /// `(Â_l^T C) / ||Â_l||^2` where `C = (end / IFM) Õ + sum_{k < start} Â_k (W_k - Ŵ_k)^T`
    /// is the carried term for a block spanning `start..end`.
    pub(crate) fn carried_projection(
        &self,
        weight_hat: &Matrix,
        start: usize,
        end: usize,
        l: usize,
    ) -> Vec<f64> {
        let coef = end as f64 / self.ifm() as f64;
        let mut acc: Vec<f64> = self
            .inherited_projection(l)
            .into_iter()
            .map(|q| coef * q)
            .collect();
        for k in 0..start {
            let g = self.gram(l, k);
            for (j, s) in acc.iter_mut().enumerate() {
                *s += g * (self.weight[(j, k)] - weight_hat[(j, k)]);
            }
        }
        let n = self.norm(l);
        acc.into_iter().map(|s| s / n).collect()
    }
}

/// Per-block precomputation of the low-memory update.
///
/// Row `r` of `carried` is `(Â_l^T (share Õ + U^(b-1))) / ||Â_l||^2` for
/// `l = block.start + r`; `gram[(r, c)]` is `Â_l^T Â_k / ||Â_l||^2`. Storage is
/// `block_size x OFM` plus `block_size x block_size` scalars. Rows for
/// zero-norm columns are left at zero.
#[derive(Clone, Debug)]
pub struct BlockProjection {
    pub block: Range<usize>,
    pub carried: Matrix,
    pub gram: Matrix,
    pub norms: Vec<f64>,
}

impl BlockProjection {
    /// Builds the projections from scalar Gram terms only.
    pub fn from_gram(ctx: &LowMemoryContext<'_>, weight_hat: &Matrix, block: Range<usize>) -> Self {
        let ofm = ctx.weight.rows();
        let len = block.len();
        let mut carried = Matrix::zeros(len, ofm);
        let mut gram = Matrix::zeros(len, len);
        let mut norms = Vec::with_capacity(len);
        for (r, l) in block.clone().enumerate() {
            let n = ctx.norm(l);
            norms.push(n);
            if n == 0.0 {
                continue;
            }
            let p = ctx.carried_projection(weight_hat, block.start, block.end, l);
            carried.row_mut(r).copy_from_slice(&p);
            for (c, k) in block.clone().enumerate() {
                gram[(r, c)] = ctx.gram(l, k) / n;
            }
        }
        Self {
            block,
            carried,
            gram,
            norms,
        }
    }

    /// Reference construction from the full `M x OFM` state of the direct
    /// path.
    pub fn from_state(state: &CalibState, act_hat: &Matrix, block: Range<usize>) -> Self {
        let c = state.carried(&block);
        let ofm = c.cols();
        let len = block.len();
        let mut carried = Matrix::zeros(len, ofm);
        let mut gram = Matrix::zeros(len, len);
        let mut norms = Vec::with_capacity(len);
        for (r, l) in block.clone().enumerate() {
            let al = act_hat.col(l);
            let n = dot(&al, &al);
            norms.push(n);
            if n == 0.0 {
                continue;
            }
            carried
                .row_mut(r)
                .copy_from_slice(&project_update(act_hat, &c, l, n));
            for (cc, k) in block.clone().enumerate() {
                gram[(r, cc)] = dot(&al, &act_hat.col(k)) / n;
            }
        }
        Self {
            block,
            carried,
            gram,
            norms,
        }
    }
}

/// Projected update `(Â_l^T / ||Â_l||^2) l_update` as a `1 x OFM` vector:
/// the precomputed carried row plus the scalar-weighted in-block residuals
/// of every `k != l`. Zero-norm columns yield zeros.
pub fn l_update_low_memory(
    proj: &BlockProjection,
    weight: &Matrix,
    weight_hat: &Matrix,
    l: usize,
) -> Result<Vec<f64>> {
    if !proj.block.contains(&l) {
        return Err(Error::shape(format!(
            "column {l} outside block {:?}",
            proj.block
        )));
    }
    let r = l - proj.block.start;
    let mut p = proj.carried.row(r).to_vec();
    if proj.norms[r] == 0.0 {
        return Ok(p);
    }
    for (c, k) in proj.block.clone().enumerate() {
        if k == l {
            continue;
        }
        let g = proj.gram[(r, c)];
        for (j, s) in p.iter_mut().enumerate() {
            *s += g * (weight[(j, k)] - weight_hat[(j, k)]);
        }
    }
    Ok(p)
}
