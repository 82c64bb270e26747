use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::extract::{PreparedCube, SampleSpec};
use crate::cube::{CellTime, CubeHeader};
use crate::error::{Error, Result};

/// Disjoint calendar-year sets for training, validation and testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_years: Vec<i32>,
    pub val_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

impl SplitSpec {
    pub fn new(train_years: Vec<i32>, val_years: Vec<i32>, test_years: Vec<i32>) -> Result<Self> {
        let s = Self { train_years, val_years, test_years };
        s.validate()?;
        Ok(s)
    }

    /// Last year for testing, the one before for validation, everything earlier for training.
    pub fn default_for(header: &CubeHeader) -> Result<Self> {
        let (first, last) = header.year_range();
        if last - first < 2 {
            return Err(Error::Config(format!("a default split needs at least 3 years, cube covers {first}..={last}")));
        }
        Self::new((first..last - 1).collect(), vec![last - 1], vec![last])
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for y in self.train_years.iter().chain(&self.val_years).chain(&self.test_years) {
            if !seen.insert(*y) {
                return Err(Error::Config(format!("year {y} appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn years(&self, split: Split) -> &[i32] {
        match split {
            Split::Train => &self.train_years,
            Split::Val => &self.val_years,
            Split::Test => &self.test_years,
        }
    }

    /// Split owning a sample with feature window `[t_c − ts + 1, t_c]` and label at `t_c + h`.
    ///
    /// Training samples keep their whole window and label inside training years;
    /// validation and test samples only need the label year.
    pub fn assign(&self, header: &CubeHeader, spec: &SampleSpec, t_c: usize) -> Option<Split> {
        let label_year = header.year_of(t_c + spec.h);
        if self.val_years.contains(&label_year) {
            return Some(Split::Val);
        }
        if self.test_years.contains(&label_year) {
            return Some(Split::Test);
        }
        let first_year = header.year_of(t_c + 1 - spec.ts);
        (first_year..=label_year).all(|y| self.train_years.contains(&y)).then_some(Split::Train)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// How training negatives are thinned out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    KeepAll,
    /// Negatives per positive, drawn afresh every epoch.
    Ratio(f64),
}

impl Default for NegativePolicy {
    fn default() -> Self {
        NegativePolicy::Ratio(1.0)
    }
}

/// A sample origin and its label, without materialized features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRef {
    pub cell: CellTime,
    pub label: u8,
}

/// All training candidates, separated by label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainPool {
    pub positives: Vec<SampleRef>,
    pub negatives: Vec<SampleRef>,
}

impl TrainPool {
    pub fn from_refs(refs: &[SampleRef]) -> Self {
        let (positives, negatives) = refs.iter().partition(|s| s.label == 1);
        Self { positives, negatives }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The shuffled training list for one epoch; a pure function of `(policy, seed, epoch)`.
    pub fn epoch(&self, policy: NegativePolicy, seed: u64, epoch: u64) -> Vec<SampleRef> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut out = self.positives.clone();
        match policy {
            NegativePolicy::KeepAll => out.extend_from_slice(&self.negatives),
            NegativePolicy::Ratio(ratio) => {
                let want = ((self.positives.len() as f64 * ratio).round() as usize).min(self.negatives.len());
                out.extend(self.negatives.choose_multiple(&mut rng, want).copied());
            }
        }
        out.shuffle(&mut rng);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSets {
    pub train_pool: TrainPool,
    /// Epoch-0 draw from the pool.
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

/// Every valid sample origin on land, with the split it belongs to.
pub fn candidates(cube: &PreparedCube, spec: &SampleSpec, split: &SplitSpec) -> Vec<(Split, SampleRef)> {
    let h = &cube.header;
    let mut out = Vec::new();
    if h.time_len < spec.ts + spec.h {
        return out;
    }
    for t in spec.ts - 1..h.time_len - spec.h {
        let Some(which) = split.assign(h, spec, t) else {
            continue;
        };
        for lat in 0..h.lat_len {
            for lon in 0..h.lon_len {
                if !cube.is_land(lat, lon) {
                    continue;
                }
                let cell =
                    CellTime { lat_idx: lat, lon_idx: lon, t_idx: t, year: h.year_of(t), period: h.period_of(t) };
                let label = cube.label(lat, lon, t + spec.h);
                out.push((which, SampleRef { cell, label }));
            }
        }
    }
    out
}

/// Enumerates train/val/test samples; training negatives are thinned per `policy`.
pub fn enumerate_samples(
    cube: &PreparedCube,
    spec: &SampleSpec,
    split: &SplitSpec,
    policy: NegativePolicy,
    seed: u64,
) -> Result<SampleSets> {
    spec.validate()?;
    split.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (which, s) in candidates(cube, spec, split) {
        match which {
            Split::Train => train.push(s),
            Split::Val => val.push(s),
            Split::Test => test.push(s),
        }
    }
    for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
        if set.is_empty() {
            return Err(Error::Data(format!("{name} split has no samples")));
        }
    }
    let train_pool = TrainPool::from_refs(&train);
    Ok(SampleSets { train: train_pool.epoch(policy, seed, 0), train_pool, val, test })
}

/// Writes `lat_idx,lon_idx,t_idx,label` rows for auditing a sample list.
pub fn write_sample_csv(path: &Path, samples: &[SampleRef]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["lat_idx", "lon_idx", "t_idx", "label"]).map_err(|e| Error::Data(e.to_string()))?;
    for s in samples {
        w.serialize((s.cell.lat_idx, s.cell.lon_idx, s.cell.t_idx, s.label)).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
