//! Deterministic synthetic models for tests and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Activation, LayerNode, ModelGraph, NodeKind, QuantizePolicy};
use crate::tensorio::{DType, DenseTensor, TensorContainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub samples: usize,
}

impl Default for FixtureDims {
    fn default() -> Self {
        Self {
            input: 16,
            hidden: 32,
            output: 8,
            samples: 64,
        }
    }
}

/// Model, weights and samples of one fixture.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub graph: ModelGraph,
    pub weights: TensorContainer,
    pub samples: TensorContainer,
}

fn linear(id: &str, input: &str, policy: QuantizePolicy) -> LayerNode {
    LayerNode {
        id: id.into(),
        kind: NodeKind::Linear {
            weight: format!("{id}.weight"),
            bias: Some(format!("{id}.bias")),
        },
        inputs: vec![input.into()],
        policy,
    }
}

fn relu(id: &str, input: &str) -> LayerNode {
    LayerNode {
        id: id.into(),
        kind: NodeKind::Elementwise {
            func: Activation::Relu,
        },
        inputs: vec![input.into()],
        policy: QuantizePolicy::Quantize,
    }
}

fn gaussian(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let n = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let count = shape.iter().product();
    let data = (0..count).map(|_| n.sample(rng)).collect();
    DenseTensor::new(shape, DType::F32, data)
}

fn build(graph: ModelGraph, dims: FixtureDims, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = std::collections::HashMap::from([(graph.input.clone(), dims.input)]);
    let mut weights = TensorContainer::new();
    for &i in graph.order() {
        let node = &graph.nodes[i];
        let in_w = widths[&node.inputs[0]];
        let out_w = match &node.kind {
            NodeKind::Linear { weight, bias } => {
                let out_w = if node.id == graph.output {
                    dims.output
                } else {
                    dims.hidden
                };
                let std = 1.0 / (in_w as f64).sqrt();
                weights.insert(weight.clone(), gaussian(vec![out_w, in_w], std, &mut rng)?);
                if let Some(b) = bias {
                    weights.insert(b.clone(), gaussian(vec![out_w], 0.1, &mut rng)?);
                }
                out_w
            }
            _ => in_w,
        };
        widths.insert(node.id.clone(), out_w);
    }
    let mut samples = TensorContainer::new();
    samples.insert(
        "samples",
        gaussian(vec![dims.samples, dims.input], 1.0, &mut rng)?,
    );
    Ok(Fixture {
        graph,
        weights,
        samples,
    })
}

fn check(dims: FixtureDims) -> Result<()> {
    if dims.input == 0 || dims.hidden == 0 || dims.output == 0 || dims.samples == 0 {
        return Err(Error::Config(format!(
            "fixture sizes must be positive: {dims:?}"
        )));
    }
    Ok(())
}

/// `f4(f3(f2(f1(x)), f1(x)))` with `f3` a residual add.
pub fn fig1(seed: u64, dims: FixtureDims) -> Result<Fixture> {
    check(dims)?;
    let q = QuantizePolicy::Quantize;
    let add = LayerNode {
        id: "f3".into(),
        kind: NodeKind::Add,
        inputs: vec!["f2".into(), "f1".into()],
        policy: q,
    };
    let graph = ModelGraph::new(
        "x".into(),
        "f4".into(),
        vec![
            linear("f1", "x", q),
            linear("f2", "f1", q),
            add,
            linear("f4", "f3", q),
        ],
    )?;
    build(graph, dims, seed)
}

/// Three linear layers with ReLUs in between; the last layer is frozen.
pub fn mlp(seed: u64, dims: FixtureDims) -> Result<Fixture> {
    check(dims)?;
    let q = QuantizePolicy::Quantize;
    let graph = ModelGraph::new(
        "x".into(),
        "l3".into(),
        vec![
            linear("l1", "x", q),
            relu("r1", "l1"),
            linear("l2", "r1", q),
            relu("r2", "l2"),
            linear("l3", "r2", QuantizePolicy::Frozen),
        ],
    )?;
    build(graph, dims, seed)
}
