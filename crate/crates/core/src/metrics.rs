//! Average precision and the naive seasonal baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{PreparedCube, SampleRef, SampleSpec};

/// Scores paired with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    n_pos: usize,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Data(format!("{} scores but {} labels", scores.len(), labels.len())));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score {s}")));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        Ok(Self { scores, labels, n_pos })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos
    }
}

/// `AP = Σ (R_t − R_{t−1})·P_t` over distinct score thresholds, highest first.
///
/// Items with equal scores enter together as one threshold.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    if set.n_pos == 0 {
        return Err(Error::Data("average precision is undefined without positives".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == s {
            if set.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / set.n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    average_precision(&ScoredSet::new(scores.to_vec(), labels.to_vec())?)
}

fn any_rule(past: &[u8]) -> u8 {
    past.iter().any(|&v| v == 1) as u8
}

fn majority_rule(past: &[u8]) -> u8 {
    let fire = past.iter().filter(|&&v| v == 1).count();
    (fire > past.len() - fire) as u8
}

fn past_column(history: &[Vec<u8>], target_year: usize, period: usize) -> Result<Vec<u8>> {
    if target_year == 0 || target_year > history.len() {
        return Err(Error::Data(format!("target year index {target_year} has no preceding history")));
    }
    history[..target_year]
        .iter()
        .map(|row| row.get(period).copied().ok_or_else(|| Error::Data(format!("period {period} missing from history"))))
        .collect()
}

/// 1 iff any earlier year of `history` (`[year][period]`) had fire in `period`.
pub fn naive_any_baseline(history: &[Vec<u8>], target_year: usize, period: usize) -> Result<u8> {
    Ok(any_rule(&past_column(history, target_year, period)?))
}

/// 1 iff strictly more earlier years had fire in `period` than did not.
pub fn naive_majority_baseline(history: &[Vec<u8>], target_year: usize, period: usize) -> Result<u8> {
    Ok(majority_rule(&past_column(history, target_year, period)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "naive-any")]
    NaiveAny,
    #[serde(rename = "naive-majority")]
    NaiveMajority,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::NaiveAny => "naive-any",
            Baseline::NaiveMajority => "naive-majority",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive-any" => Ok(Baseline::NaiveAny),
            "naive-majority" => Ok(Baseline::NaiveMajority),
            _ => Err(Error::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Fire labels at `(lat, lon)` in the same period as `t` for every earlier year on the cube.
pub fn prior_labels(cube: &PreparedCube, lat: usize, lon: usize, t: usize) -> Vec<u8> {
    let h = &cube.header;
    let (year, period) = (h.year_of(t), h.period_of(t));
    (h.t0_year..year).filter_map(|y| h.time_index(y, period)).map(|ti| cube.label(lat, lon, ti)).collect()
}

/// Binary baseline predictions for the label step `t_c + h` of each sample.
pub fn baseline_scores(
    cube: &PreparedCube,
    spec: &SampleSpec,
    refs: &[SampleRef],
    baseline: Baseline,
) -> Result<Vec<f64>> {
    refs.iter()
        .map(|s| {
            let t = s.cell.t_idx + spec.h;
            let past = prior_labels(cube, s.cell.lat_idx, s.cell.lon_idx, t);
            if past.is_empty() {
                return Err(Error::Data(format!("no earlier year on the cube for time index {t}")));
            }
            let v = match baseline {
                Baseline::NaiveAny => any_rule(&past),
                Baseline::NaiveMajority => majority_rule(&past),
            };
            Ok(v as f64)
        })
        .collect()
}

/// One results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub ts: usize,
    pub h: usize,
    pub r: usize,
    pub k: usize,
    pub split: String,
    pub auprc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

impl EvalReport {
    /// Scores a model or baseline output against labels.
    pub fn from_scores(
        model: &str,
        spec: &SampleSpec,
        split: &str,
        seed: u64,
        scores: &[f64],
        labels: &[u8],
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        let set = ScoredSet::new(scores.to_vec(), labels.to_vec())?;
        Ok(Self {
            model: model.to_string(),
            ts: spec.ts,
            h: spec.h,
            r: spec.r,
            k: spec.k,
            split: split.to_string(),
            auprc: average_precision(&set)?,
            n_pos: set.n_pos(),
            n_neg: set.n_neg(),
            seed,
        })
    }

    /// A row recording a failed run; its AUPRC is NaN.
    pub fn failed(model: &str, spec: &SampleSpec, split: &str, seed: u64) -> Self {
        Self {
            model: model.to_string(),
            ts: spec.ts,
            h: spec.h,
            r: spec.r,
            k: spec.k,
            split: split.to_string(),
            auprc: f64::NAN,
            n_pos: 0,
            n_neg: 0,
            seed,
        }
    }
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_reports(path: &Path, rows: &[EvalReport]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))).collect()
}

/// Results pivoted into one row per `(model, ts, target h)` and one column per radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusTable {
    pub radii: Vec<usize>,
    pub rows: Vec<RadiusRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusRow {
    pub model: String,
    pub ts: usize,
    pub h: usize,
    pub values: Vec<Option<f64>>,
}

/// Later rows for the same `(model, ts, h, r)` replace earlier ones.
pub fn pivot_by_radius(reports: &[EvalReport]) -> RadiusTable {
    let radii: Vec<usize> = reports.iter().map(|r| r.r).collect::<BTreeSet<_>>().into_iter().collect();
    let mut cells: BTreeMap<(String, usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    for rep in reports {
        cells.entry((rep.model.clone(), rep.ts, rep.h)).or_default().insert(rep.r, rep.auprc);
    }
    let rows = cells
        .into_iter()
        .map(|((model, ts, h), by_r)| RadiusRow {
            model,
            ts,
            h,
            values: radii.iter().map(|r| by_r.get(r).copied()).collect(),
        })
        .collect();
    RadiusTable { radii, rows }
}

pub fn write_radius_table(path: &Path, table: &RadiusTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["model".to_string(), "ts".into(), "target".into()];
    header.extend(table.radii.iter().map(|r| format!("r{r}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for row in &table.rows {
        let mut rec = vec![row.model.clone(), row.ts.to_string(), row.h.to_string()];
        rec.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
