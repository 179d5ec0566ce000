use serde::{Deserialize, Serialize};

use super::{BlockFormat, ElementFormat};

/// Summary numbers of a format, all derived by exhaustive enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormatStats {
    /// Largest magnitude divided by smallest nonzero magnitude.
    pub dynamic_range: f64,
    /// Smallest gap between adjacent non-negative representable values.
    pub precision: f64,
    /// Distinct encodings after collapsing `+0 = -0`. For block formats this
    /// counts (scale code, element value) pairs.
    pub alphabet_size: usize,
    /// Distinct decoded reals.
    pub unique_value_count: usize,
    pub max_value: f64,
    pub min_nonzero_value: f64,
}

fn stats_from_values(values: &[f64], alphabet_size: usize) -> FormatStats {
    let nonneg: Vec<f64> = values.iter().copied().filter(|v| *v >= 0.0).collect();
    let max_value = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_nonzero_value = values
        .iter()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let precision = nonneg
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    FormatStats {
        dynamic_range: max_value / min_nonzero_value,
        precision,
        alphabet_size,
        unique_value_count: values.len(),
        max_value,
        min_nonzero_value,
    }
}

impl ElementFormat {
    pub fn stats(&self) -> FormatStats {
        let vals = self.enumerate_values();
        let n = vals.len();
        stats_from_values(&vals, n)
    }
}

impl BlockFormat {
    /// Every `scale x element` product, deduplicated and sorted.
    pub fn enumerate_values(&self) -> Vec<f64> {
        let elems = self.element.enumerate_values();
        let mut vals = Vec::with_capacity(elems.len() * self.scale.code_count() as usize);
        for code in self.scale.min_code()..=self.scale.max_code() {
            let s = self.scale.decode(code);
            vals.extend(elems.iter().map(|p| s * p));
        }
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals
    }

    pub fn stats(&self) -> FormatStats {
        let vals = self.enumerate_values();
        let alphabet = self.scale.code_count() as usize * self.element.enumerate_values().len();
        stats_from_values(&vals, alphabet)
    }
}
