//! Model DAG, forward passes and layer-by-layer calibration.
//!
//! A model file is JSON:
//!
//! ```json
//! {
//!   "input": "x",
//!   "output": "f4",
//!   "nodes": [
//!     {"id": "f1", "op": "linear", "weight": "f1.weight", "bias": "f1.bias", "inputs": ["x"]},
//!     {"id": "r1", "op": "elementwise", "func": "relu", "inputs": ["f1"]},
//!     {"id": "f3", "op": "add", "inputs": ["f2", "f1"]},
//!     {"id": "f4", "op": "linear", "weight": "f4.weight", "inputs": ["f3"], "policy": "frozen"}
//!   ]
//! }
//! ```
//!
//! `input` names the samples and is not itself a node. `policy` applies to
//! linear nodes: `quantize` (default), `calibrate` or `frozen`.

mod calibrate;
mod forward;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use calibrate::{
    calibrate_model, effective_policies, evaluate_model, CalibMode, CalibOptions, CalibOutcome,
    LayerEvents, BYTES_PER_VALUE,
};
pub use forward::{apply_activation, forward, forward_from, linear_input, ActivationTrace};

use crate::error::{Error, Result};
use crate::tensorio::{Matrix, TensorContainer};

/// Weight and bias tensors by name; biases are `1 x OFM`.
pub type WeightMap = BTreeMap<String, Matrix>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Tanh approximation.
    Gelu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum NodeKind {
    Linear {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    Elementwise {
        func: Activation,
    },
    Add,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizePolicy {
    #[default]
    Quantize,
    #[serde(alias = "calibrate_only")]
    Calibrate,
    Frozen,
}

impl QuantizePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantizePolicy::Quantize => "quantize",
            QuantizePolicy::Calibrate => "calibrate",
            QuantizePolicy::Frozen => "frozen",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub policy: QuantizePolicy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelFile {
    input: String,
    output: String,
    nodes: Vec<LayerNode>,
}

/// A validated model: acyclic, every node reachable from the input, with a
/// topological order fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub input: String,
    pub output: String,
    pub nodes: Vec<LayerNode>,
    order: Vec<usize>,
}

impl ModelGraph {
    pub fn new(input: String, output: String, nodes: Vec<LayerNode>) -> Result<Self> {
        let mut graph = Self {
            input,
            output,
            nodes,
            order: Vec::new(),
        };
        graph.order = graph.validate()?;
        Ok(graph)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("model file: {e}")))?;
        Self::new(f.input, f.output, f.nodes)
    }

    pub fn to_json(&self) -> String {
        let f = ModelFile {
            input: self.input.clone(),
            output: self.output.clone(),
            nodes: self.nodes.clone(),
        };
        serde_json::to_string_pretty(&f).expect("model serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.to_json();
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Node indices, every node after all of its inputs.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Node ids in topological order.
    pub fn topological_ids(&self) -> Vec<&str> {
        self.order
            .iter()
            .map(|&i| self.nodes[i].id.as_str())
            .collect()
    }

    /// `(node, weight name, bias name)` of every linear node, in order.
    pub fn linear_nodes(&self) -> impl Iterator<Item = (&LayerNode, &str, Option<&str>)> {
        self.order.iter().filter_map(|&i| {
            let n = &self.nodes[i];
            match &n.kind {
                NodeKind::Linear { weight, bias } => Some((n, weight.as_str(), bias.as_deref())),
                _ => None,
            }
        })
    }

    fn validate(&self) -> Result<Vec<usize>> {
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id == self.input {
                return Err(Error::Graph(format!(
                    "node id `{}` shadows the input",
                    n.id
                )));
            }
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut weights = BTreeSet::new();
        for n in &self.nodes {
            let arity_ok = match &n.kind {
                NodeKind::Linear { .. } | NodeKind::Elementwise { .. } => n.inputs.len() == 1,
                NodeKind::Add => n.inputs.len() >= 2,
            };
            if !arity_ok {
                return Err(Error::Graph(format!(
                    "node `{}` has {} inputs",
                    n.id,
                    n.inputs.len()
                )));
            }
            for src in &n.inputs {
                if src != &self.input && !index.contains_key(src.as_str()) {
                    return Err(Error::Graph(format!(
                        "node `{}` reads unknown `{src}`",
                        n.id
                    )));
                }
            }
            if let NodeKind::Linear { weight, bias } = &n.kind {
                for t in std::iter::once(weight).chain(bias) {
                    if !weights.insert(t.as_str()) {
                        return Err(Error::Graph(format!("tensor `{t}` used by two parameters")));
                    }
                }
            } else if n.policy != QuantizePolicy::Quantize {
                return Err(Error::Graph(format!(
                    "policy set on non-linear node `{}`",
                    n.id
                )));
            }
        }
        if !index.contains_key(self.output.as_str()) {
            return Err(Error::Graph(format!(
                "output `{}` is not a node",
                self.output
            )));
        }
        let order = topological_order(self, &index)?;
        self.check_reachable(&index)?;
        Ok(order)
    }

    fn check_reachable(&self, index: &HashMap<&str, usize>) -> Result<()> {
        let mut consumers: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for src in &n.inputs {
                consumers.entry(src.as_str()).or_default().push(i);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.input.as_str()];
        while let Some(id) = stack.pop() {
            for &c in consumers.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(self.nodes[c].id.as_str());
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Graph(format!(
                "node `{}` is not reachable from the input",
                self.nodes[i].id
            )));
        }
        debug_assert!(index.len() == self.nodes.len());
        Ok(())
    }
}

/// Kahn's algorithm; among ready nodes the earliest declared goes first, so
/// a chain keeps its declaration order.
fn topological_order(graph: &ModelGraph, index: &HashMap<&str, usize>) -> Result<Vec<usize>> {
    let n = graph.nodes.len();
    let mut pending = vec![0usize; n];
    let mut consumers = vec![Vec::new(); n];
    for (i, node) in graph.nodes.iter().enumerate() {
        for src in &node.inputs {
            if let Some(&s) = index.get(src.as_str()) {
                pending[i] += 1;
                consumers[s].push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|&i| pending[i] > 0)
            .map(|i| graph.nodes[i].id.as_str())
            .collect();
        return Err(Error::Graph(format!("cycle through {}", stuck.join(", "))));
    }
    Ok(order)
}

/// Loads every tensor of a container as a matrix.
pub fn weight_map(container: &TensorContainer) -> Result<WeightMap> {
    container
        .tensors
        .iter()
        .map(|(name, t)| Ok((name.clone(), t.to_matrix()?)))
        .collect()
}

/// Calibration rows from the `samples` tensor (`[M, IFM]` or `[S, T, IFM]`).
pub fn samples_matrix(container: &TensorContainer) -> Result<Matrix> {
    let t = container.get("samples")?;
    if !(2..=3).contains(&t.shape.len()) {
        return Err(Error::shape(format!(
            "samples must have rank 2 or 3, got shape {:?}",
            t.shape
        )));
    }
    let m = t.to_matrix()?;
    if m.rows() == 0 {
        return Err(Error::shape("no calibration samples"));
    }
    Ok(m)
}
