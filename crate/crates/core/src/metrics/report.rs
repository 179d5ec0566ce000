use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-layer table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub node: String,
    /// `quantize`, `calibrate` or `frozen`: what was actually done.
    pub action: String,
    pub samples: usize,
    pub ifm: usize,
    pub ofm: usize,
    /// `||A W^T - Â W^T||^2` with the layer's original weights.
    pub error_before: f64,
    /// `||A W^T - Â Ŵ^T||^2` with the final weights.
    pub error_after: f64,
    /// Same as `error_after` for plain round-to-nearest weights; quantized
    /// layers only.
    pub rtn_error: Option<f64>,
    pub zero_norm_columns: usize,
    pub scale_clamps: usize,
    pub rescales: usize,
    pub memory_direct_bytes: u64,
    pub memory_low_memory_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub output_node: String,
    /// `||Φ(x) - Φ̂(x)||^2` summed over all calibration rows.
    pub error: f64,
    /// Reference energy `||Φ(x)||^2`.
    pub reference: f64,
}

/// Configuration echo; together with the input files it determines the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub format: String,
    pub format_spec: String,
    pub block_size: usize,
    pub bits_per_weight: f64,
    pub mode: String,
    pub exec_mode: String,
    pub calibrate_unquantized: bool,
    pub quantize_activations: bool,
    pub seed: u64,
    pub bytes_per_value: u64,
    /// Node id → effective policy.
    pub policies: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub config: RunEcho,
    pub layers: Vec<LayerReport>,
    pub end_to_end: EndToEndReport,
}

impl CalibReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Corrupt(format!("report: {e}")))
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

    pub fn layers_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for layer in &self.layers {
            w.serialize(layer)
                .map_err(|e| Error::Corrupt(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Corrupt(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.layers_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn total_error_after(&self) -> f64 {
        self.layers.iter().map(|l| l.error_after).sum()
    }

    pub fn total_rtn_error(&self) -> f64 {
        self.layers.iter().filter_map(|l| l.rtn_error).sum()
    }

    /// Largest relative deviation between the numeric fields of two reports
    /// with the same structure, or an error naming the first structural
    /// difference.
    pub fn max_relative_deviation(&self, other: &Self) -> Result<f64> {
        if self.config != other.config {
            return Err(Error::Mismatch("run configuration differs".into()));
        }
        if self.layers.len() != other.layers.len() {
            return Err(Error::Mismatch(format!(
                "{} layers vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        let rel = |a: f64, b: f64| {
            let d = (a - b).abs();
            if d == 0.0 {
                0.0
            } else {
                d / a.abs().max(b.abs())
            }
        };
        let mut worst = rel(self.end_to_end.error, other.end_to_end.error)
            .max(rel(self.end_to_end.reference, other.end_to_end.reference));
        for (a, b) in self.layers.iter().zip(&other.layers) {
            let same_shape = a.node == b.node
                && a.action == b.action
                && (a.samples, a.ifm, a.ofm) == (b.samples, b.ifm, b.ofm)
                && (a.memory_direct_bytes, a.memory_low_memory_bytes)
                    == (b.memory_direct_bytes, b.memory_low_memory_bytes);
            if !same_shape {
                return Err(Error::Mismatch(format!(
                    "layer `{}` metadata differs",
                    a.node
                )));
            }
            worst = worst
                .max(rel(a.error_before, b.error_before))
                .max(rel(a.error_after, b.error_after));
            match (a.rtn_error, b.rtn_error) {
                (Some(x), Some(y)) => worst = worst.max(rel(x, y)),
                (None, None) => {}
                _ => return Err(Error::Mismatch(format!("layer `{}` rtn field", a.node))),
            }
        }
        Ok(worst)
    }
}
