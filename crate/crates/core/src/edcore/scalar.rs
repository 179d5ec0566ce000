use std::time::Instant;

use super::lowmem::LowMemoryContext;
use super::state::{add_column_error, CalibState};
use super::{finish_result, ExecMode, LayerCalibResult, LayerProblem, PassMode};
use crate::error::{Error, Result};
use crate::formats::{BlockFormat, QuantizedBlock};
use crate::tensorio::Matrix;

enum Accumulator<'a> {
    Direct(CalibState),
    LowMemory(LowMemoryContext<'a>),
}

/// Column-at-a-time ED pass over a layer (natural column order).
///
/// At step `k` the column `W_k` is shifted by
/// `Â_k^T (Õ / IFM + U^(k-1)) / ||Â_k||^2` and, in [`PassMode::Quantize`],
/// rounded with a private power-of-two scale per weight. `U^(k)` then absorbs
/// the realized column error.
pub struct ScalarPass<'a> {
    problem: LayerProblem<'a>,
    fmt: Option<BlockFormat>,
    mode: PassMode,
    acc: Accumulator<'a>,
    weight_hat: Matrix,
    codes: Vec<Option<QuantizedBlock>>,
    clamped: Vec<bool>,
    next: usize,
    zero_norm: usize,
    started: Instant,
}

impl<'a> ScalarPass<'a> {
    pub fn new(
        problem: LayerProblem<'a>,
        fmt: Option<&BlockFormat>,
        mode: PassMode,
        exec: ExecMode,
    ) -> Result<Self> {
        let fmt = match (mode, fmt) {
            (PassMode::Quantize, None) => {
                return Err(Error::Config("quantize mode needs a format".into()))
            }
            (PassMode::Quantize, Some(f)) if f.block_size != 1 => {
                return Err(Error::Config(format!(
                    "scalar pass needs block_size 1, got {}",
                    f.block_size
                )))
            }
            (PassMode::Quantize, Some(f)) => {
                f.validate()?;
                Some(*f)
            }
            (PassMode::UpdateOnly, _) => None,
        };
        let acc = match exec {
            ExecMode::Direct => Accumulator::Direct(CalibState::new(&problem)?),
            ExecMode::LowMemory => Accumulator::LowMemory(LowMemoryContext::new(&problem)?),
        };
        let (ofm, ifm) = problem.weight.shape();
        Ok(Self {
            weight_hat: problem.weight.clone(),
            problem,
            fmt,
            mode,
            acc,
            codes: vec![None; ofm * ifm],
            clamped: vec![false; ofm * ifm],
            next: 0,
            zero_norm: 0,
            started: Instant::now(),
        })
    }

    /// Index of the next column to process.
    pub fn position(&self) -> usize {
        self.next
    }

    pub fn weight_hat(&self) -> &Matrix {
        &self.weight_hat
    }

    /// `U^(k)` after the last completed step; only kept in direct mode.
    pub fn running_update(&self) -> Option<&Matrix> {
        match &self.acc {
            Accumulator::Direct(s) => Some(&s.running),
            Accumulator::LowMemory(_) => None,
        }
    }

    /// Processes one column. Returns `false` once every column is done.
    pub fn step(&mut self) -> Result<bool> {
        let k = self.next;
        let w = self.problem.weight;
        let (ofm, ifm) = w.shape();
        if k == ifm {
            return Ok(false);
        }
        let act_hat = self.problem.act_hat;

        let (adj, pending) = match &self.acc {
            Accumulator::Direct(state) => {
                let alpha = 1.0 / ifm as f64;
                let mut r = state.running.clone();
                for (rv, ov) in r.data_mut().iter_mut().zip(state.inherited.data()) {
                    *rv += ov * alpha;
                }
                let mut n = 0.0;
                for i in 0..act_hat.rows() {
                    n += act_hat[(i, k)] * act_hat[(i, k)];
                }
                let adj = if n == 0.0 {
                    self.zero_norm += 1;
                    w.col(k)
                } else {
                    let mut s = vec![0.0; ofm];
                    for i in 0..r.rows() {
                        let a = act_hat[(i, k)];
                        for (sv, rv) in s.iter_mut().zip(r.row(i)) {
                            *sv += a * rv;
                        }
                    }
                    (0..ofm).map(|j| w[(j, k)] + s[j] / n).collect()
                };
                (adj, Some(r))
            }
            Accumulator::LowMemory(ctx) => {
                let adj = if ctx.norm(k) == 0.0 {
                    self.zero_norm += 1;
                    w.col(k)
                } else {
                    let p = ctx.carried_projection(&self.weight_hat, k, k + 1, k);
                    (0..ofm).map(|j| w[(j, k)] + p[j]).collect()
                };
                (adj, None)
            }
        };
        check_finite(&adj, k)?;
        self.realize(k, &adj)?;
        if let (Some(mut r), Accumulator::Direct(state)) = (pending, &mut self.acc) {
            // U^(k) = Õ / IFM + U^(k-1) + Â_k (W_k - Ŵ_k)^T
            add_column_error(&mut r, act_hat, w, &self.weight_hat, k);
            state.running = r;
        }
        self.next += 1;
        Ok(true)
    }

    fn realize(&mut self, k: usize, adj: &[f64]) -> Result<()> {
        let ifm = self.problem.ifm();
        match (self.mode, &self.fmt) {
            (PassMode::Quantize, Some(fmt)) => {
                for (j, &v) in adj.iter().enumerate() {
                    let (qb, choice) = fmt.quantize_block(&[v])?;
                    self.weight_hat[(j, k)] = fmt.dequantize_block(&qb)[0];
                    self.codes[j * ifm + k] = Some(qb);
                    self.clamped[j * ifm + k] = choice.clamped;
                }
            }
            _ => {
                for (j, &v) in adj.iter().enumerate() {
                    self.weight_hat[(j, k)] = v;
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<LayerCalibResult> {
        while self.step()? {}
        let (ofm, ifm) = self.problem.weight.shape();
        let quantized = self.fmt.map(|format| crate::formats::QuantizedTensor {
            format,
            rows: ofm,
            cols: ifm,
            axis: 1,
            blocks: self
                .codes
                .into_iter()
                .map(|c| c.expect("every column realized"))
                .collect(),
        });
        let clamps = self.clamped.iter().filter(|c| **c).count();
        finish_result(
            &self.problem,
            self.weight_hat,
            quantized,
            self.zero_norm,
            clamps,
            0,
            self.started,
        )
    }
}

pub(crate) fn check_finite(adj: &[f64], column: usize) -> Result<()> {
    if let Some(v) = adj.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericalAbort {
            layer: String::new(),
            column,
            detail: format!("non-finite adjusted weight {v}"),
        });
    }
    Ok(())
}
