use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::GridGraph;
use crate::cube::{
    binarize_target, positional_encoding, standardize, CellTime, CubeHeader, Datacube, StandardizationStats,
    POSITIONAL_FEATURES,
};
use crate::error::{Error, Result};

/// Temporal and spatial extent of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Number of input time steps.
    pub ts: usize,
    /// Forecasting horizon in steps.
    pub h: usize,
    /// Window radius; the window is `(2r+1) × (2r+1)`.
    pub r: usize,
    /// Neighbour count of the grid graph (self included).
    pub k: usize,
}

impl SampleSpec {
    pub fn new(ts: usize, h: usize, r: usize, k: usize) -> Result<Self> {
        let s = Self { ts, h, r, k };
        s.validate()?;
        Ok(s)
    }

    pub fn side(&self) -> usize {
        2 * self.r + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.ts == 0 || self.h == 0 {
            return Err(Error::Config("ts and h must be at least 1".into()));
        }
        let n = self.side() * self.side();
        if self.k == 0 || self.k > n {
            return Err(Error::Config(format!("k = {} outside [1, {n}]", self.k)));
        }
        Ok(())
    }
}

/// Standardized drivers, positional encodings and binary labels, ready for sampling.
#[derive(Debug, Clone)]
pub struct PreparedCube {
    pub header: CubeHeader,
    pub mask: Vec<u8>,
    pub driver_names: Vec<String>,
    pub stats: StandardizationStats,
    drivers: Vec<Vec<f32>>,
    labels: Vec<u8>,
    positional: Vec<[f64; POSITIONAL_FEATURES]>,
}

impl PreparedCube {
    pub fn new(cube: &Datacube, stats: &StandardizationStats, drivers: &[String], target: &str) -> Result<Self> {
        if drivers.is_empty() {
            return Err(Error::Config("at least one driver variable is required".into()));
        }
        let labels = binarize_target(cube, target)?;
        let standardized = standardize(cube, stats)?;
        let mut data = Vec::with_capacity(drivers.len());
        for name in drivers {
            let idx =
                cube.header.variable_index(name).ok_or_else(|| Error::Data(format!("driver {name} not in cube")))?;
            data.push(standardized.data[idx].clone());
        }
        let h = &cube.header;
        let positional = (0..h.lat_len)
            .flat_map(|i| (0..h.lon_len).map(move |j| (i, j)))
            .map(|(i, j)| {
                let cell = CellTime { lat_idx: i, lon_idx: j, t_idx: 0, year: h.t0_year, period: h.t0_step };
                positional_encoding(&cell, h)
            })
            .collect();
        Ok(Self {
            header: cube.header.clone(),
            mask: cube.mask.clone(),
            driver_names: drivers.to_vec(),
            stats: stats.clone(),
            drivers: data,
            labels,
            positional,
        })
    }

    /// Drivers plus the four positional features.
    pub fn n_features(&self) -> usize {
        self.drivers.len() + POSITIONAL_FEATURES
    }

    pub fn is_land(&self, lat: usize, lon: usize) -> bool {
        self.mask[lat * self.header.lon_len + lon] == 1
    }

    pub fn label(&self, lat: usize, lon: usize, t: usize) -> u8 {
        self.labels[self.header.index(t, lat, lon)]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Standardized value of driver `d` (NaN already replaced by 0).
    pub fn driver(&self, d: usize, t: usize, lat: usize, lon: usize) -> f32 {
        self.drivers[d][self.header.index(t, lat, lon)]
    }

    pub fn positional(&self, lat: usize, lon: usize) -> [f64; POSITIONAL_FEATURES] {
        self.positional[lat * self.header.lon_len + lon]
    }

    /// Maps a window offset to a grid cell, applying the boundary policy:
    /// longitude wraps on global grids, everything else outside the domain is absent.
    pub fn window_cell(&self, lat: usize, lon: usize, dlat: isize, dlon: isize) -> Option<(usize, usize)> {
        let h = &self.header;
        let i = lat as isize + dlat;
        if i < 0 || i >= h.lat_len as isize {
            return None;
        }
        let mut j = lon as isize + dlon;
        if h.wraps_longitude() {
            j = j.rem_euclid(h.lon_len as isize);
        } else if j < 0 || j >= h.lon_len as isize {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn check_origin(&self, spec: &SampleSpec, cell: &CellTime) -> Result<()> {
        let h = &self.header;
        if cell.lat_idx >= h.lat_len || cell.lon_idx >= h.lon_len {
            return Err(Error::Data(format!("cell {cell:?} outside grid")));
        }
        if cell.t_idx + 1 < spec.ts || cell.t_idx + spec.h >= h.time_len {
            return Err(Error::Data(format!(
                "time {} leaves no room for ts = {} history and h = {} horizon",
                cell.t_idx, spec.ts, spec.h
            )));
        }
        if !self.is_land(cell.lat_idx, cell.lon_idx) {
            return Err(Error::Data(format!("center ({}, {}) is off the land mask", cell.lat_idx, cell.lon_idx)));
        }
        Ok(())
    }

    /// Writes the `[ts][F][side][side]` feature block of a sample into `out`.
    pub fn fill_features(&self, spec: &SampleSpec, cell: &CellTime, out: &mut [f64]) -> Result<()> {
        self.check_origin(spec, cell)?;
        let side = spec.side();
        let nf = self.n_features();
        let plane = side * side;
        if out.len() != spec.ts * nf * plane {
            return Err(Error::shape("fill_features", "output buffer has the wrong size"));
        }
        out.fill(0.0);
        let r = spec.r as isize;
        let first = cell.t_idx + 1 - spec.ts;
        for row in 0..side {
            for col in 0..side {
                let Some((lat, lon)) = self.window_cell(cell.lat_idx, cell.lon_idx, row as isize - r, col as isize - r)
                else {
                    continue;
                };
                let pos = self.positional(lat, lon);
                for step in 0..spec.ts {
                    let t = first + step;
                    let base = step * nf * plane + row * side + col;
                    for d in 0..self.drivers.len() {
                        out[base + d * plane] = self.driver(d, t, lat, lon) as f64;
                    }
                    for (p, v) in pos.iter().enumerate() {
                        out[base + (self.drivers.len() + p) * plane] = *v;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One model-ready instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[ts][F][side][side]`, row-major; step `j` is time `t_c − ts + 1 + j`.
    pub features: Vec<f64>,
    pub ts: usize,
    pub n_features: usize,
    pub side: usize,
    pub graph: Option<Arc<GridGraph>>,
    pub label: u8,
    pub origin: CellTime,
}

impl Sample {
    pub fn at(&self, step: usize, feature: usize, row: usize, col: usize) -> f64 {
        let plane = self.side * self.side;
        self.features[(step * self.n_features + feature) * plane + row * self.side + col]
    }
}

/// Builds the sample at `cell`: features up to `t_c` and the label at `t_c + h`.
pub fn extract_sample(
    cube: &PreparedCube,
    spec: &SampleSpec,
    cell: CellTime,
    graph: Option<Arc<GridGraph>>,
) -> Result<Sample> {
    spec.validate()?;
    let nf = cube.n_features();
    let side = spec.side();
    let mut features = vec![0.0; spec.ts * nf * side * side];
    cube.fill_features(spec, &cell, &mut features)?;
    if let Some(g) = &graph {
        if g.side != side {
            return Err(Error::Config(format!("graph side {} differs from window side {side}", g.side)));
        }
    }
    Ok(Sample {
        features,
        ts: spec.ts,
        n_features: nf,
        side,
        graph,
        label: cube.label(cell.lat_idx, cell.lon_idx, cell.t_idx + spec.h),
        origin: cell,
    })
}

/// A stack of samples sharing one spec, in `[B][ts][F][side][side]` layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub size: usize,
    pub ts: usize,
    pub n_features: usize,
    pub side: usize,
    pub graph: Option<Arc<GridGraph>>,
}

impl Batch {
    pub fn sample_len(&self) -> usize {
        self.ts * self.n_features * self.side * self.side
    }

    /// Gathers the samples at `cells` straight from the cube.
    pub fn gather(
        cube: &PreparedCube,
        spec: &SampleSpec,
        cells: &[CellTime],
        graph: Option<Arc<GridGraph>>,
    ) -> Result<Self> {
        let nf = cube.n_features();
        let side = spec.side();
        let len = spec.ts * nf * side * side;
        let mut features = vec![0.0; cells.len() * len];
        let mut labels = Vec::with_capacity(cells.len());
        for (cell, chunk) in cells.iter().zip(features.chunks_exact_mut(len)) {
            cube.fill_features(spec, cell, chunk)?;
            labels.push(cube.label(cell.lat_idx, cell.lon_idx, cell.t_idx + spec.h) as f64);
        }
        Ok(Self { features, labels, size: cells.len(), ts: spec.ts, n_features: nf, side, graph })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let mut features = Vec::with_capacity(samples.len() * first.features.len());
        for s in samples {
            if (s.ts, s.n_features, s.side) != (first.ts, first.n_features, first.side) {
                return Err(Error::shape("batch", "samples have different shapes"));
            }
            features.extend_from_slice(&s.features);
        }
        Ok(Self {
            features,
            labels: samples.iter().map(|s| s.label as f64).collect(),
            size: samples.len(),
            ts: first.ts,
            n_features: first.n_features,
            side: first.side,
            graph: first.graph.clone(),
        })
    }

    /// Input at `step` as `[B, F, side, side]` data.
    pub fn step_images(&self, step: usize) -> Vec<f64> {
        let block = self.n_features * self.side * self.side;
        let len = self.sample_len();
        let mut out = Vec::with_capacity(self.size * block);
        for b in 0..self.size {
            let base = b * len + step * block;
            out.extend_from_slice(&self.features[base..base + block]);
        }
        out
    }

    /// Input at `step` as `[B·n, F]` vertex-feature rows (vertex = row·side + col).
    pub fn step_vertices(&self, step: usize) -> Vec<f64> {
        let plane = self.side * self.side;
        let nf = self.n_features;
        let len = self.sample_len();
        let mut out = vec![0.0; self.size * plane * nf];
        for b in 0..self.size {
            let base = b * len + step * nf * plane;
            for f in 0..nf {
                for v in 0..plane {
                    out[(b * plane + v) * nf + f] = self.features[base + f * plane + v];
                }
            }
        }
        out
    }
}
