use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Datacube;
use crate::error::{Error, Result};

/// Floor applied to the standard deviation of (near-)constant variables.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub variables: BTreeMap<String, VariableStats>,
    /// Half-open time-index range the statistics were computed over.
    pub computed_over: (usize, usize),
}

impl StandardizationStats {
    pub fn get(&self, name: &str) -> Option<VariableStats> {
        self.variables.get(name).copied()
    }
}

/// Mean and population standard deviation of every variable over land cells in
/// `train_range`, skipping non-finite values.
pub fn compute_standardization(cube: &Datacube, train_range: Range<usize>) -> Result<StandardizationStats> {
    let h = &cube.header;
    if train_range.is_empty() || train_range.end > h.time_len {
        return Err(Error::Config(format!(
            "standardization range {train_range:?} is empty or outside 0..{}",
            h.time_len
        )));
    }
    let cells = h.cells_per_step();
    let mut variables = BTreeMap::new();
    for (spec, values) in h.variables.iter().zip(&cube.data) {
        // Welford's update keeps the single pass numerically stable.
        let mut count = 0u64;
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        for t in train_range.clone() {
            let step = &values[t * cells..(t + 1) * cells];
            for (&v, &m) in step.iter().zip(&cube.mask) {
                if m == 0 || !v.is_finite() {
                    continue;
                }
                count += 1;
                let x = v as f64;
                let delta = x - mean;
                mean += delta / count as f64;
                m2 += delta * (x - mean);
            }
        }
        if count == 0 {
            return Err(Error::Data(format!("variable {} has no valid values in the training range", spec.name)));
        }
        let std = (m2 / count as f64).sqrt().max(STD_FLOOR);
        variables.insert(spec.name.clone(), VariableStats { mean, std });
    }
    Ok(StandardizationStats { variables, computed_over: (train_range.start, train_range.end) })
}

/// Applies `x ↦ (x − mean) / std` per variable; non-finite results become 0.
pub fn standardize(cube: &Datacube, stats: &StandardizationStats) -> Result<Datacube> {
    let mut data = Vec::with_capacity(cube.data.len());
    for (spec, values) in cube.header.variables.iter().zip(&cube.data) {
        let s =
            stats.get(&spec.name).ok_or_else(|| Error::Data(format!("no standardization stats for {}", spec.name)))?;
        data.push(
            values
                .iter()
                .map(|&v| {
                    let z = ((v as f64 - s.mean) / s.std) as f32;
                    if z.is_finite() {
                        z
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    Ok(Datacube { header: cube.header.clone(), data, mask: cube.mask.clone() })
}
