use std::ops::Range;
use std::time::Instant;

use super::lowmem::{l_update_low_memory, BlockProjection, LowMemoryContext};
use super::scalar::check_finite;
use super::state::{l_update_direct, project_update, CalibState};
use super::{finish_result, ExecMode, LayerCalibResult, LayerProblem, PassMode};
use crate::error::Result;
use crate::formats::{BlockFormat, QuantizedBlock, QuantizedTensor};
use crate::tensorio::{dot, Matrix};

/// Block-aware ED pass. Blocks run along IFM within each weight row.
///
/// Per block: every row-block starts from its RTN encoding. Column `l` is
/// then set to `W_l + Â_l^T l_update / (||Â_l||^2 * len)` and its row-blocks
/// are re-encoded from the current targets (adjusted values for processed
/// columns, original weights for the rest), recomputing the shared scale.
/// After the last column the realized block error is folded into the
/// carried update.
pub fn ed_block_pass(
    problem: &LayerProblem<'_>,
    fmt: &BlockFormat,
    mode: PassMode,
    exec: ExecMode,
) -> Result<LayerCalibResult> {
    fmt.validate()?;
    let started = Instant::now();
    let w = problem.weight;
    let act_hat = problem.act_hat;
    let (ofm, ifm) = w.shape();
    let bs = fmt.block_size;
    let nb = ifm.div_ceil(bs);
    let quantize = mode == PassMode::Quantize;

    let mut weight_hat = w.clone();
    let mut target = w.clone();
    let mut blocks = vec![
        QuantizedBlock {
            scale_code: 0,
            element_codes: Vec::new()
        };
        if quantize { ofm * nb } else { 0 }
    ];
    let mut clamped = vec![false; blocks.len()];
    let mut zero_norm = 0;
    let mut rescales = 0;

    let mut direct = match exec {
        ExecMode::Direct => Some(CalibState::new(problem)?),
        ExecMode::LowMemory => None,
    };
    let lowmem = match exec {
        ExecMode::LowMemory => Some(LowMemoryContext::new(problem)?),
        ExecMode::Direct => None,
    };

    let mut encode_row_block = |weight_hat: &mut Matrix,
                                target: &Matrix,
                                j: usize,
                                b: usize,
                                block: &Range<usize>|
     -> Result<bool> {
        let (qb, choice) = fmt.quantize_block(&target.row(j)[block.clone()])?;
        let idx = j * nb + b;
        let changed = blocks[idx].scale_code != qb.scale_code;
        let n = qb.element_codes.len();
        fmt.dequantize_into(
            &qb,
            &mut weight_hat.row_mut(j)[block.start..block.start + n],
        );
        clamped[idx] = choice.clamped;
        blocks[idx] = qb;
        Ok(changed)
    };

    for b in 0..nb {
        let block = b * bs..((b + 1) * bs).min(ifm);
        let len = block.len() as f64;
        if quantize {
            for j in 0..ofm {
                encode_row_block(&mut weight_hat, &target, j, b, &block)?;
            }
        }
        // depends only on columns before the block, which are final
        let proj = lowmem
            .as_ref()
            .map(|ctx| BlockProjection::from_gram(ctx, &weight_hat, block.clone()));

        for l in block.clone() {
            let al = act_hat.col(l);
            let n = dot(&al, &al);
            let adj: Vec<f64> = if n == 0.0 {
                zero_norm += 1;
                w.col(l)
            } else {
                let p = match (&direct, &proj) {
                    (Some(state), _) => {
                        let lu = l_update_direct(state, act_hat, w, &weight_hat, block.clone(), l)?;
                        project_update(act_hat, &lu, l, n)
                    }
                    (None, Some(proj)) => l_update_low_memory(proj, w, &weight_hat, l)?,
                    (None, None) => unreachable!("one accumulator is always present"),
                };
                (0..ofm).map(|j| w[(j, l)] + p[j] / len).collect()
            };
            check_finite(&adj, l)?;
            for (j, v) in adj.into_iter().enumerate() {
                target[(j, l)] = v;
                if !quantize {
                    weight_hat[(j, l)] = v;
                }
            }
            if quantize {
                for j in 0..ofm {
                    let changed = encode_row_block(&mut weight_hat, &target, j, b, &block)?;
                    // a scale change after the first column recodes finalized slots
                    if changed && l > block.start {
                        rescales += 1;
                    }
                }
            }
        }
        if let Some(state) = direct.as_mut() {
            state.fold_block(act_hat, w, &weight_hat, block);
        }
    }

    let clamps = clamped.iter().filter(|c| **c).count();
    let quantized = quantize.then_some(QuantizedTensor {
        format: *fmt,
        rows: ofm,
        cols: ifm,
        axis: 1,
        blocks,
    });
    finish_result(
        problem, weight_hat, quantized, zero_norm, clamps, rescales, started,
    )
}
