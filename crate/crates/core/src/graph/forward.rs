use std::collections::BTreeMap;

use super::{Activation, ModelGraph, NodeKind, WeightMap};
use crate::error::{Error, Result};
use crate::formats::{quantize_tensor, BlockFormat};
use crate::tensorio::{matmul_bt, Matrix};

/// Output of every node (and the input) over all calibration rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub outputs: BTreeMap<String, Matrix>,
}

impl ActivationTrace {
    pub fn get(&self, id: &str) -> Result<&Matrix> {
        self.outputs
            .get(id)
            .ok_or_else(|| Error::Graph(format!("no activations for `{id}`")))
    }
}

pub fn apply_activation(f: Activation, x: f64) -> f64 {
    match f {
        Activation::Relu => x.max(0.0),
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        Activation::Identity => x,
    }
}

/// The matrix a linear node multiplies: its input activations, block
/// quantized along IFM per row when `act_quant` is set.
pub fn linear_input(
    graph: &ModelGraph,
    trace: &ActivationTrace,
    node: &str,
    act_quant: Option<&BlockFormat>,
) -> Result<Matrix> {
    let n = graph
        .node(node)
        .ok_or_else(|| Error::Graph(format!("unknown node `{node}`")))?;
    let x = trace.get(&n.inputs[0])?;
    match act_quant {
        Some(fmt) => Ok(quantize_tensor(x, fmt, 1)?.dequantize()),
        None => Ok(x.clone()),
    }
}

/// Runs the model on `samples`.
pub fn forward(
    graph: &ModelGraph,
    weights: &WeightMap,
    samples: &Matrix,
    act_quant: Option<&BlockFormat>,
) -> Result<ActivationTrace> {
    let mut trace = ActivationTrace {
        outputs: BTreeMap::from([(graph.input.clone(), samples.clone())]),
    };
    forward_from(graph, weights, &mut trace, 0, act_quant)?;
    Ok(trace)
}

/// Recomputes the nodes at topological positions `start..`, reusing the
/// stored outputs of everything earlier.
pub fn forward_from(
    graph: &ModelGraph,
    weights: &WeightMap,
    trace: &mut ActivationTrace,
    start: usize,
    act_quant: Option<&BlockFormat>,
) -> Result<()> {
    for &i in &graph.order()[start..] {
        let node = &graph.nodes[i];
        let out = match &node.kind {
            NodeKind::Linear { weight, bias } => {
                let w = weights.get(weight).ok_or_else(|| {
                    Error::Graph(format!("missing weight `{weight}` for `{}`", node.id))
                })?;
                let x = linear_input(graph, trace, &node.id, act_quant)?;
                if x.cols() != w.cols() {
                    return Err(Error::shape(format!(
                        "node `{}`: input width {} but weight is {}x{}",
                        node.id,
                        x.cols(),
                        w.rows(),
                        w.cols()
                    )));
                }
                let mut y = matmul_bt(&x, w)?;
                if let Some(b) = bias {
                    let b = weights.get(b).ok_or_else(|| {
                        Error::Graph(format!("missing bias `{b}` for `{}`", node.id))
                    })?;
                    if b.rows() != 1 || b.cols() != w.rows() {
                        return Err(Error::shape(format!(
                            "node `{}`: bias shape {:?} for {} outputs",
                            node.id,
                            b.shape(),
                            w.rows()
                        )));
                    }
                    for r in 0..y.rows() {
                        for (v, bv) in y.row_mut(r).iter_mut().zip(b.row(0)) {
                            *v += bv;
                        }
                    }
                }
                y
            }
            NodeKind::Elementwise { func } => trace
                .get(&node.inputs[0])?
                .map(|v| apply_activation(*func, v)),
            NodeKind::Add => {
                let mut acc = trace.get(&node.inputs[0])?.clone();
                for src in &node.inputs[1..] {
                    let x = trace.get(src)?;
                    if x.shape() != acc.shape() {
                        return Err(Error::shape(format!(
                            "node `{}`: adding {:?} to {:?}",
                            node.id,
                            x.shape(),
                            acc.shape()
                        )));
                    }
                    acc = acc.add(x)?;
                }
                acc
            }
        };
        trace.outputs.insert(node.id.clone(), out);
    }
    Ok(())
}
