use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{forward, forward_from, linear_input, ModelGraph, NodeKind, QuantizePolicy, WeightMap};
use crate::edcore::{
    ed_quantize, ed_scalar_pass, gpfq_pass, rtn_quantize, ExecMode, LayerCalibResult, LayerProblem,
    PassMode,
};
use crate::error::{Error, Result};
use crate::formats::{quantize_tensor, BlockFormat, QuantizedTensor};
use crate::metrics::{
    layer_output_error, memory_footprint, squared_error, EndToEndReport, LayerReport,
};
use crate::tensorio::{squared_l2, DType, Matrix};

/// Accumulator width used in memory accounting.
pub const BYTES_PER_VALUE: u64 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibMode {
    /// Error diffusion against the original model's activations.
    #[default]
    Ed,
    /// ED with the quantized model's own activations as reference (`Â = A`).
    Gpfq,
    /// Round to nearest, no calibration.
    Rtn,
}

impl CalibMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibMode::Ed => "ed",
            CalibMode::Gpfq => "gpfq",
            CalibMode::Rtn => "rtn",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CalibOptions {
    pub mode: CalibMode,
    /// Treat frozen linear layers as calibrate-only.
    pub calibrate_unquantized: bool,
    /// Quantize every linear input with the weight format.
    pub quantize_activations: bool,
    pub exec: ExecMode,
}

impl CalibOptions {
    /// What actually happens to a linear node. Calibrate-only updates are
    /// part of ED; the baseline modes leave those layers alone.
    pub fn action(&self, policy: QuantizePolicy) -> QuantizePolicy {
        match (policy, self.mode) {
            (QuantizePolicy::Quantize, _) => QuantizePolicy::Quantize,
            (QuantizePolicy::Calibrate, CalibMode::Ed) => QuantizePolicy::Calibrate,
            (QuantizePolicy::Frozen, CalibMode::Ed) if self.calibrate_unquantized => {
                QuantizePolicy::Calibrate
            }
            _ => QuantizePolicy::Frozen,
        }
    }

    fn act_quant<'f>(&self, fmt: &'f BlockFormat) -> Option<&'f BlockFormat> {
        self.quantize_activations.then_some(fmt)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerEvents {
    pub zero_norm_columns: usize,
    pub scale_clamps: usize,
    pub rescales: usize,
}

#[derive(Clone, Debug)]
pub struct CalibOutcome {
    /// Final values of every tensor; quantized weights are dequantized.
    pub weights: WeightMap,
    /// Quantized weights by tensor name.
    pub quantized: BTreeMap<String, QuantizedTensor>,
    pub layers: Vec<LayerReport>,
    pub end_to_end: EndToEndReport,
    /// Linear node id → effective action.
    pub policies: BTreeMap<String, String>,
}

/// Calibrates the linear layers in topological order.
///
/// The original activations are traced once. The quantized-model trace is
/// refreshed from each layer onward after it is finalized, so every layer
/// sees its upstream layers in their final state. Updated full-precision
/// weights are rounded to their storage dtype (`dtypes`, default f64)
/// before the refresh.
pub fn calibrate_model(
    graph: &ModelGraph,
    weights: &WeightMap,
    dtypes: &BTreeMap<String, DType>,
    samples: &Matrix,
    fmt: &BlockFormat,
    options: &CalibOptions,
) -> Result<CalibOutcome> {
    fmt.validate()?;
    let aq = options.act_quant(fmt);
    let reference = forward(graph, weights, samples, None)?;
    let mut current = weights.clone();
    let mut hat = forward(graph, &current, samples, aq)?;
    let mut quantized = BTreeMap::new();
    let mut events = BTreeMap::new();

    for (pos, &i) in graph.order().iter().enumerate() {
        let node = &graph.nodes[i];
        let NodeKind::Linear { weight, .. } = &node.kind else {
            continue;
        };
        let action = options.action(node.policy);
        if action == QuantizePolicy::Frozen {
            continue;
        }
        let act = linear_input(graph, &reference, &node.id, None)?;
        let act_hat = linear_input(graph, &hat, &node.id, aq)?;
        let w = current
            .get(weight)
            .ok_or_else(|| Error::Graph(format!("missing weight `{weight}` for `{}`", node.id)))?;
        if w.cols() != act.cols() {
            return Err(Error::shape(format!(
                "node `{}`: input width {} but weight is {}x{}",
                node.id,
                act.cols(),
                w.rows(),
                w.cols()
            )));
        }
        let result = run_layer(w, &act, &act_hat, fmt, action, options).map_err(|e| match e {
            Error::NumericalAbort { column, detail, .. } => Error::NumericalAbort {
                layer: node.id.clone(),
                column,
                detail,
            },
            e => e,
        })?;
        if result.zero_norm_columns > 0 {
            warn!(
                "{}: {} zero-norm input columns, correction skipped",
                node.id, result.zero_norm_columns
            );
        }
        info!(
            "{}: {} (error {:.6e} -> {:.6e}, {} clamps, {} rescales)",
            node.id,
            action.as_str(),
            result.error_before,
            result.error_after,
            result.scale_clamps,
            result.rescales
        );
        events.insert(
            node.id.clone(),
            LayerEvents {
                zero_norm_columns: result.zero_norm_columns,
                scale_clamps: result.scale_clamps,
                rescales: result.rescales,
            },
        );
        let new_w = match action {
            QuantizePolicy::Calibrate => {
                let dtype = dtypes.get(weight).copied().unwrap_or(DType::F64);
                result.weights.map(|v| dtype.round(v))
            }
            _ => result.weights,
        };
        if let Some(q) = result.quantized {
            quantized.insert(weight.clone(), q);
        }
        current.insert(weight.clone(), new_w);
        forward_from(graph, &current, &mut hat, pos, aq)?;
    }

    let (mut layers, end_to_end) = evaluate_model(graph, weights, &current, samples, fmt, options)?;
    for layer in &mut layers {
        if let Some(ev) = events.get(&layer.node) {
            layer.zero_norm_columns = ev.zero_norm_columns;
            layer.scale_clamps = ev.scale_clamps;
            layer.rescales = ev.rescales;
        }
    }
    Ok(CalibOutcome {
        weights: current,
        quantized,
        layers,
        end_to_end,
        policies: effective_policies(graph, options),
    })
}

fn run_layer(
    w: &Matrix,
    act: &Matrix,
    act_hat: &Matrix,
    fmt: &BlockFormat,
    action: QuantizePolicy,
    options: &CalibOptions,
) -> Result<LayerCalibResult> {
    match (action, options.mode) {
        (QuantizePolicy::Calibrate, _) => ed_scalar_pass(
            &LayerProblem::new(w, act, act_hat)?,
            None,
            PassMode::UpdateOnly,
            options.exec,
        ),
        (_, CalibMode::Ed) => ed_quantize(&LayerProblem::new(w, act, act_hat)?, fmt, options.exec),
        (_, CalibMode::Gpfq) => gpfq_pass(w, act_hat, fmt, options.exec),
        (_, CalibMode::Rtn) => rtn_quantize(&LayerProblem::new(w, act_hat, act_hat)?, fmt),
    }
}

pub fn effective_policies(graph: &ModelGraph, options: &CalibOptions) -> BTreeMap<String, String> {
    graph
        .linear_nodes()
        .map(|(n, _, _)| (n.id.clone(), options.action(n.policy).as_str().to_string()))
        .collect()
}

/// Recomputes the error fields of a run from the original and final
/// weights. Event counts are left at zero.
pub fn evaluate_model(
    graph: &ModelGraph,
    original: &WeightMap,
    fin: &WeightMap,
    samples: &Matrix,
    fmt: &BlockFormat,
    options: &CalibOptions,
) -> Result<(Vec<LayerReport>, EndToEndReport)> {
    let aq = options.act_quant(fmt);
    let reference = forward(graph, original, samples, None)?;
    let hat = forward(graph, fin, samples, aq)?;
    let m = samples.rows();
    let mut layers = Vec::new();
    for (node, weight, _) in graph.linear_nodes() {
        let action = options.action(node.policy);
        let act = linear_input(graph, &reference, &node.id, None)?;
        let act_hat = linear_input(graph, &hat, &node.id, aq)?;
        let w = &original[weight];
        let w_fin = fin
            .get(weight)
            .ok_or_else(|| Error::Graph(format!("final weights lack `{weight}`")))?;
        let rtn_error = match action {
            QuantizePolicy::Quantize => {
                let rtn = quantize_tensor(w, fmt, 1)?.dequantize();
                Some(layer_output_error(&act, w, &act_hat, &rtn)?)
            }
            _ => None,
        };
        let block = match action {
            QuantizePolicy::Quantize => fmt.block_size,
            _ => 1,
        } as u64;
        let (ofm, ifm) = (w.rows() as u64, w.cols() as u64);
        layers.push(LayerReport {
            node: node.id.clone(),
            action: action.as_str().to_string(),
            samples: m,
            ifm: w.cols(),
            ofm: w.rows(),
            error_before: layer_output_error(&act, w, &act_hat, w)?,
            error_after: layer_output_error(&act, w, &act_hat, w_fin)?,
            rtn_error,
            zero_norm_columns: 0,
            scale_clamps: 0,
            rescales: 0,
            memory_direct_bytes: memory_footprint(
                m as u64,
                ofm,
                ifm,
                block,
                ExecMode::Direct,
                BYTES_PER_VALUE,
            )?,
            memory_low_memory_bytes: memory_footprint(
                m as u64,
                ofm,
                ifm,
                block,
                ExecMode::LowMemory,
                BYTES_PER_VALUE,
            )?,
        });
    }
    let out = reference.get(&graph.output)?;
    let out_hat = hat.get(&graph.output)?;
    let end_to_end = EndToEndReport {
        output_node: graph.output.clone(),
        error: squared_error(out, out_hat)?,
        reference: squared_l2(out.data()),
    };
    Ok((layers, end_to_end))
}
