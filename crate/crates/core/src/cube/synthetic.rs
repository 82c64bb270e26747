//! Deterministic desk-scale stand-in for a real fire-driver datacube.
//!
//! Each driver is an annual cosine cycle plus a static spatial offset plus an
//! AR(1) anomaly whose innovations are spatially smoothed Gaussian noise. Fire
//! occurrence is Bernoulli with probability
//! `σ(bias + Σ wᵢ·zᵢ(t − lag) + s·cos(2π(period − peak)/46))`, where `zᵢ` is the
//! unit-scale driver signal before it is mapped to physical units.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_cube, CubeHeader, Datacube, FillPolicy, VariableSpec, DRIVER_NAMES, PERIODS_PER_YEAR, TARGET_NAME};
use crate::error::{Error, Result};

pub const ORACLE_FILE: &str = "oracle.json";

/// Coefficients of the logistic fire process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireProcess {
    pub bias: f64,
    /// One weight per driver, in [`DRIVER_NAMES`] order.
    pub weights: Vec<f64>,
    /// Driver lag in steps; fire at `t` responds to drivers at `t − lag`.
    pub lag: usize,
    pub seasonal_amplitude: f64,
}

impl Default for FireProcess {
    fn default() -> Self {
        // mslp tp vpd sst t2m ssrd swvl1 lst ndvi pop
        Self {
            bias: -3.2,
            weights: vec![0.0, -0.4, 1.2, 0.0, 0.6, 0.0, -0.8, 0.0, 0.5, 0.0],
            lag: 1,
            seasonal_amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub lat_len: usize,
    pub lon_len: usize,
    pub years: usize,
    pub t0_year: i32,
    /// Latitude of the first row; rows step southwards by `resolution`.
    pub lat_first: f64,
    pub lon_first: f64,
    pub resolution: f64,
    pub land_fraction: f64,
    /// Half-width of the box filter applied to noise fields.
    pub smoothing_radius: usize,
    /// AR(1) coefficient of the driver anomalies.
    pub anomaly_persistence: f64,
    /// Amplitude of each driver's annual cycle in unit-scale signal.
    pub driver_seasonality: f64,
    pub fire: FireProcess,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            lat_len: 24,
            lon_len: 48,
            years: 6,
            t0_year: 2001,
            lat_first: 59.5,
            lon_first: -11.5,
            resolution: 1.0,
            land_fraction: 0.65,
            smoothing_radius: 2,
            anomaly_persistence: 0.8,
            driver_seasonality: 0.7,
            fire: FireProcess::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lat_len == 0 || self.lon_len == 0 {
            return Err(Error::Config("synthetic grid must be non-empty".into()));
        }
        if self.years == 0 {
            return Err(Error::Config("synthetic cube needs at least one year".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.land_fraction) || self.land_fraction == 0.0 {
            return Err(Error::Config("land_fraction must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.anomaly_persistence.abs()) {
            return Err(Error::Config("anomaly_persistence must be in (-1, 1)".into()));
        }
        if self.fire.weights.len() != DRIVER_NAMES.len() {
            return Err(Error::Config(format!(
                "fire process needs {} weights, got {}",
                DRIVER_NAMES.len(),
                self.fire.weights.len()
            )));
        }
        if (self.lat_len - 1) as f64 * self.resolution > 180.0 || self.lon_len as f64 * self.resolution > 360.0 + 1e-9 {
            return Err(Error::Config("grid exceeds the globe".into()));
        }
        Ok(())
    }
}

/// Physical units of a driver: value = offset + scale · signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverUnits {
    pub name: String,
    pub offset: f64,
    pub scale: f64,
    pub seasonal_phase: f64,
    pub time_varying: bool,
}

/// Everything needed to recompute the fire probabilities of a synthetic cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub seed: u64,
    pub config: SyntheticConfig,
    pub drivers: Vec<DriverUnits>,
    /// Peak fire period of every cell, row-major [lat][lon].
    pub fire_peak: Vec<f64>,
}

impl SyntheticOracle {
    /// Fire logit for a cell at time `t`, given the driver signals at `t − lag`.
    pub fn logit(&self, signals: &[f64], period: usize, cell: usize) -> f64 {
        let fire = &self.config.fire;
        let seasonal = (2.0 * PI * (period as f64 - self.fire_peak[cell]) / PERIODS_PER_YEAR as f64).cos();
        fire.bias
            + fire.weights.iter().zip(signals).map(|(w, z)| w * z).sum::<f64>()
            + fire.seasonal_amplitude * seasonal
    }

    /// Recovers the unit-scale signal from a stored driver value.
    pub fn signal(&self, driver: usize, value: f32) -> f64 {
        let u = &self.drivers[driver];
        (value as f64 - u.offset) / u.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCube {
    pub cube: Datacube,
    pub oracle: SyntheticOracle,
}

impl SyntheticCube {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_cube(&self.cube, dir)?;
        let path = dir.join(ORACLE_FILE);
        let json =
            serde_json::to_string_pretty(&self.oracle).map_err(|e| Error::Data(format!("serializing oracle: {e}")))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn driver_units() -> Vec<(f64, f64, bool)> {
    vec![
        (101_000.0, 600.0, true), // mslp [Pa]
        (0.002, 0.0008, true),    // tp [m]
        (1.0, 0.4, true),         // vpd [hPa]
        (288.0, 3.0, true),       // sst [K]
        (285.0, 6.0, true),       // t2m_mean [K]
        (1.4e7, 4.0e6, true),     // ssrd [J m-2]
        (0.25, 0.06, true),       // swvl1 [m3 m-3]
        (295.0, 8.0, true),       // lst_day [K]
        (0.45, 0.12, true),       // ndvi
        (40.0, 30.0, false),      // pop_dens [people km-2]
    ]
}

struct Grid {
    lat: usize,
    lon: usize,
    wrap: bool,
    radius: usize,
}

impl Grid {
    /// White noise averaged over a (2r+1)² window and rescaled to unit variance.
    fn smooth_noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let white: Vec<f64> = (0..self.lat * self.lon).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r = self.radius as isize;
        let mut out = vec![0.0; white.len()];
        for i in 0..self.lat as isize {
            for j in 0..self.lon as isize {
                let mut sum = 0.0;
                let mut count = 0usize;
                for di in -r..=r {
                    let ii = i + di;
                    if ii < 0 || ii >= self.lat as isize {
                        continue;
                    }
                    for dj in -r..=r {
                        let mut jj = j + dj;
                        if self.wrap {
                            jj = jj.rem_euclid(self.lon as isize);
                        } else if jj < 0 || jj >= self.lon as isize {
                            continue;
                        }
                        sum += white[ii as usize * self.lon + jj as usize];
                        count += 1;
                    }
                }
                out[i as usize * self.lon + j as usize] = sum / (count as f64).sqrt();
            }
        }
        out
    }
}

pub fn generate_synthetic_cube(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCube> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nlat, nlon) = (config.lat_len, config.lon_len);
    let cells = nlat * nlon;
    let time_len = config.years * PERIODS_PER_YEAR;

    let lat_values: Vec<f64> = (0..nlat).map(|i| config.lat_first - i as f64 * config.resolution).collect();
    let lon_values: Vec<f64> = (0..nlon).map(|j| config.lon_first + j as f64 * config.resolution).collect();
    let header = CubeHeader {
        time_len,
        lat_len: nlat,
        lon_len: nlon,
        lat_values: lat_values.clone(),
        lon_values,
        steps_per_year: PERIODS_PER_YEAR,
        t0_year: config.t0_year,
        t0_step: 0,
        variables: DRIVER_NAMES
            .iter()
            .chain(std::iter::once(&TARGET_NAME))
            .map(|name| VariableSpec {
                name: name.to_string(),
                fill_policy: if *name == "sst" || *name == "lst_day" { FillPolicy::Zero } else { FillPolicy::None },
            })
            .collect(),
        mask_variable: None,
    };
    let grid = Grid { lat: nlat, lon: nlon, wrap: header.wraps_longitude(), radius: config.smoothing_radius };

    // Land mask: threshold a smooth field at the requested quantile.
    let land_field = grid.smooth_noise(&mut rng);
    let mut sorted = land_field.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n_ocean = ((1.0 - config.land_fraction) * cells as f64).round() as usize;
    let mask: Vec<u8> = if n_ocean == 0 {
        vec![1; cells]
    } else {
        let threshold = sorted[n_ocean - 1];
        land_field.iter().map(|&v| u8::from(v > threshold)).collect()
    };
    let near_ocean: Vec<bool> = (0..cells)
        .map(|c| {
            let (i, j) = ((c / nlon) as isize, (c % nlon) as isize);
            (-2..=2isize).any(|di| {
                (-2..=2isize).any(|dj| {
                    let (ii, jj) = (i + di, j + dj);
                    ii >= 0
                        && jj >= 0
                        && (ii as usize) < nlat
                        && (jj as usize) < nlon
                        && mask[ii as usize * nlon + jj as usize] == 0
                })
            })
        })
        .collect();

    // Peak fire period drifts with latitude and a smooth spatial perturbation.
    let peak_noise = grid.smooth_noise(&mut rng);
    let fire_peak: Vec<f64> = (0..cells)
        .map(|c| {
            let lat = lat_values[c / nlon];
            let base = if lat >= 0.0 { 24.0 } else { 1.0 };
            base - 0.15 * lat.abs() + 3.0 * peak_noise[c]
        })
        .collect();

    let units_table = driver_units();
    let mut drivers = Vec::with_capacity(DRIVER_NAMES.len());
    let mut signals: Vec<Vec<f64>> = Vec::with_capacity(DRIVER_NAMES.len());
    let rho = config.anomaly_persistence;
    let innovation = (1.0 - rho * rho).sqrt();
    for (d, name) in DRIVER_NAMES.iter().enumerate() {
        let (offset, scale, time_varying) = units_table[d];
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let base: Vec<f64> = grid.smooth_noise(&mut rng).iter().map(|v| 0.5 * v).collect();
        let mut z = vec![0.0; time_len * cells];
        if time_varying {
            let mut anomaly = grid.smooth_noise(&mut rng);
            for t in 0..time_len {
                if t > 0 {
                    let fresh = grid.smooth_noise(&mut rng);
                    for (a, f) in anomaly.iter_mut().zip(&fresh) {
                        *a = rho * *a + innovation * f;
                    }
                }
                let period = (t % PERIODS_PER_YEAR) as f64;
                for c in 0..cells {
                    let season = (2.0 * PI * (period - fire_peak[c]) / PERIODS_PER_YEAR as f64 + phase).cos();
                    z[t * cells + c] = config.driver_seasonality * season + base[c] + anomaly[c];
                }
            }
        } else {
            for t in 0..time_len {
                for c in 0..cells {
                    z[t * cells + c] = 2.0 * base[c];
                }
            }
        }
        drivers.push(DriverUnits { name: name.to_string(), offset, scale, seasonal_phase: phase, time_varying });
        signals.push(z);
    }

    let oracle = SyntheticOracle { seed, config: config.clone(), drivers, fire_peak };

    let mut burned = vec![0.0f32; time_len * cells];
    let mut lagged = vec![0.0; DRIVER_NAMES.len()];
    for t in 0..time_len {
        let src = t.saturating_sub(config.fire.lag);
        let period = t % PERIODS_PER_YEAR;
        for c in 0..cells {
            // Draw for every cell so the stream does not depend on the mask.
            let u: f64 = rng.gen();
            let area: f64 = rng.gen_range(10.0..2_000.0);
            if mask[c] == 0 {
                continue;
            }
            for (d, z) in signals.iter().enumerate() {
                lagged[d] = z[src * cells + c];
            }
            let p = sigmoid(oracle.logit(&lagged, period, c));
            if u < p {
                burned[t * cells + c] = area as f32;
            }
        }
    }

    let mut data = Vec::with_capacity(DRIVER_NAMES.len() + 1);
    for (d, z) in signals.iter().enumerate() {
        let u = &oracle.drivers[d];
        let name = DRIVER_NAMES[d];
        let values = z
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let c = i % cells;
                let undefined = match name {
                    "sst" => mask[c] == 1 && !near_ocean[c],
                    "lst_day" => mask[c] == 0,
                    _ => false,
                };
                if undefined {
                    f32::NAN
                } else {
                    (u.offset + u.scale * s) as f32
                }
            })
            .collect();
        data.push(values);
    }
    data.push(burned);

    let cube = Datacube::new(header, data, mask)?;
    Ok(SyntheticCube { cube, oracle })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
