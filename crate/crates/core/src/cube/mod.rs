//! Gridded (time × lat × lon) datacube of fire-driver variables.
//!
//! A cube lives on disk as a directory holding `header.json`, one raw
//! little-endian `float32` file per variable and a `mask.u8` land mask. See
//! [`io`] for the byte layout.

pub mod io;
pub mod standardize;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{decode_f32_le, encode_f32_le, read_cube, write_cube};
pub use standardize::{compute_standardization, standardize, StandardizationStats, VariableStats};
pub use synthetic::{generate_synthetic_cube, FireProcess, SyntheticConfig, SyntheticCube, SyntheticOracle};

/// Number of 8-day periods in a year.
pub const PERIODS_PER_YEAR: usize = 46;

/// The ten fire-driver variables, in feature order.
pub const DRIVER_NAMES: [&str; 10] =
    ["mslp", "tp", "vpd", "sst", "t2m_mean", "ssrd", "swvl1", "lst_day", "ndvi", "pop_dens"];

/// Burned-area target variable (hectares; binarized for classification).
pub const TARGET_NAME: &str = "gwis_ba";

/// Number of positional features appended to the drivers: sin/cos of latitude and longitude.
pub const POSITIONAL_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    /// Non-finite values are allowed and become 0 after standardization.
    Zero,
    /// Every value must be finite.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub fill_policy: FillPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub time_len: usize,
    pub lat_len: usize,
    pub lon_len: usize,
    pub lat_values: Vec<f64>,
    pub lon_values: Vec<f64>,
    pub steps_per_year: usize,
    pub t0_year: i32,
    pub t0_step: usize,
    pub variables: Vec<VariableSpec>,
    pub mask_variable: Option<String>,
}

fn strictly_monotonic(values: &[f64]) -> bool {
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    increasing || decreasing
}

impl CubeHeader {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Data(format!("cube header: {m}")));
        if self.time_len == 0 || self.lat_len == 0 || self.lon_len == 0 {
            return fail("zero-sized grid".into());
        }
        if self.lat_values.len() != self.lat_len || self.lon_values.len() != self.lon_len {
            return fail("coordinate array length differs from grid size".into());
        }
        if !strictly_monotonic(&self.lat_values) {
            return fail("latitude values are not strictly monotonic".into());
        }
        if !strictly_monotonic(&self.lon_values) {
            return fail("longitude values are not strictly monotonic".into());
        }
        let span = (self.lon_values[self.lon_len - 1] - self.lon_values[0]).abs();
        if span > 360.0 {
            return fail(format!("longitude span {span} exceeds 360 degrees"));
        }
        if self.steps_per_year == 0 {
            return fail("steps_per_year must be at least 1".into());
        }
        if self.t0_step >= self.steps_per_year {
            return fail("t0_step must be below steps_per_year".into());
        }
        let mut names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate variable names".into());
        }
        for name in &names {
            let ok =
                !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
            if !ok || *name == "mask" || *name == "header" || *name == "oracle" {
                return fail(format!("invalid variable name {name:?}"));
            }
        }
        Ok(())
    }

    pub fn cells_per_step(&self) -> usize {
        self.lat_len * self.lon_len
    }

    pub fn len(&self) -> usize {
        self.time_len * self.cells_per_step()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, lat: usize, lon: usize) -> usize {
        (t * self.lat_len + lat) * self.lon_len + lon
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Whether the longitude axis covers the full circle, so windows wrap east/west.
    pub fn wraps_longitude(&self) -> bool {
        if self.lon_len < 2 {
            return false;
        }
        let step = (self.lon_values[1] - self.lon_values[0]).abs();
        let span = (self.lon_values[self.lon_len - 1] - self.lon_values[0]).abs() + step;
        (span - 360.0).abs() < 1e-6
    }

    pub fn year_of(&self, t_idx: usize) -> i32 {
        self.t0_year + ((self.t0_step + t_idx) / self.steps_per_year) as i32
    }

    pub fn period_of(&self, t_idx: usize) -> usize {
        (self.t0_step + t_idx) % self.steps_per_year
    }

    /// Time index of `(year, period)`, if it falls inside the cube.
    pub fn time_index(&self, year: i32, period: usize) -> Option<usize> {
        if period >= self.steps_per_year {
            return None;
        }
        let abs = (year - self.t0_year) as i64 * self.steps_per_year as i64 + period as i64;
        let t = abs - self.t0_step as i64;
        (t >= 0 && (t as usize) < self.time_len).then_some(t as usize)
    }

    /// Inclusive range of calendar years present on the time axis.
    pub fn year_range(&self) -> (i32, i32) {
        (self.year_of(0), self.year_of(self.time_len - 1))
    }
}

/// One location and 8-day step of the cube, with its calendar position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellTime {
    pub lat_idx: usize,
    pub lon_idx: usize,
    pub t_idx: usize,
    pub year: i32,
    pub period: usize,
}

impl CellTime {
    pub fn new(header: &CubeHeader, lat_idx: usize, lon_idx: usize, t_idx: usize) -> Result<Self> {
        if lat_idx >= header.lat_len || lon_idx >= header.lon_len || t_idx >= header.time_len {
            return Err(Error::Data(format!("cell ({lat_idx}, {lon_idx}, {t_idx}) outside cube")));
        }
        Ok(Self { lat_idx, lon_idx, t_idx, year: header.year_of(t_idx), period: header.period_of(t_idx) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datacube {
    pub header: CubeHeader,
    /// One `[time][lat][lon]` array per header variable, in header order.
    pub data: Vec<Vec<f32>>,
    /// `[lat][lon]` land mask, 1 = valid.
    pub mask: Vec<u8>,
}

impl Datacube {
    pub fn new(header: CubeHeader, data: Vec<Vec<f32>>, mask: Vec<u8>) -> Result<Self> {
        header.validate()?;
        if data.len() != header.variables.len() {
            return Err(Error::Data(format!("{} data arrays for {} variables", data.len(), header.variables.len())));
        }
        for (spec, values) in header.variables.iter().zip(&data) {
            if values.len() != header.len() {
                return Err(Error::Data(format!(
                    "variable {} has {} values, expected {}",
                    spec.name,
                    values.len(),
                    header.len()
                )));
            }
            if spec.fill_policy == FillPolicy::None && values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "variable {} has non-finite values but fill policy is none",
                    spec.name
                )));
            }
        }
        if mask.len() != header.cells_per_step() {
            return Err(Error::Data(format!("mask has {} cells, expected {}", mask.len(), header.cells_per_step())));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(Self { header, data, mask })
    }

    pub fn variable(&self, name: &str) -> Option<&[f32]> {
        self.header.variable_index(name).map(|i| self.data[i].as_slice())
    }

    pub fn is_land(&self, lat: usize, lon: usize) -> bool {
        self.mask[lat * self.header.lon_len + lon] == 1
    }

    pub fn land_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Burned area as a binary occurrence label: 1 where the value is finite and positive.
pub fn binarize_target(cube: &Datacube, target_var: &str) -> Result<Vec<u8>> {
    let values =
        cube.variable(target_var).ok_or_else(|| Error::Data(format!("target variable {target_var} not in cube")))?;
    Ok(values.iter().map(|&v| binarize_value(v)).collect())
}

#[inline]
pub fn binarize_value(v: f32) -> u8 {
    u8::from(v.is_finite() && v > 0.0)
}

/// `(sin φ, cos φ, sin λ, cos λ)` of the cell's coordinates.
pub fn positional_encoding(cell: &CellTime, header: &CubeHeader) -> [f64; 4] {
    let lat = header.lat_values[cell.lat_idx].to_radians();
    let lon = header.lon_values[cell.lon_idx].to_radians();
    [lat.sin(), lat.cos(), lon.sin(), lon.cos()]
}
