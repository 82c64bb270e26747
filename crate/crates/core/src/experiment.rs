//! End-to-end runs: prepare a cube, train a model, score a split.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cube::{compute_standardization, CubeHeader, Datacube, StandardizationStats, TARGET_NAME};
use crate::error::{Error, Result};
use crate::metrics::{baseline_scores, Baseline, EvalReport};
use crate::models::{Model, ModelConfig};
use crate::sampling::{candidates, PreparedCube, SampleRef, SampleSpec, Split, SplitSpec, TrainPool};
use crate::training::{subsample, train, ForecastLearner, TrainConfig, TrainOutcome};

/// Everything needed to reproduce one training run from a cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub sample: SampleSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

/// Data stored next to model parameters so a checkpoint can be evaluated on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub experiment: ExperimentSpec,
    pub drivers: Vec<String>,
    pub target: String,
    pub stats: StandardizationStats,
    pub best_epoch: Option<usize>,
}

/// Smallest time-index range covering every step of the training years.
pub fn train_time_range(header: &CubeHeader, split: &SplitSpec) -> Result<Range<usize>> {
    let steps: Vec<usize> = (0..header.time_len).filter(|&t| split.train_years.contains(&header.year_of(t))).collect();
    match (steps.first(), steps.last()) {
        (Some(&a), Some(&b)) => Ok(a..b + 1),
        _ => Err(Error::Config("no training year lies on the cube's time axis".into())),
    }
}

/// Every cube variable except the target and the mask variable, in header order.
pub fn driver_variables(header: &CubeHeader, target: &str) -> Vec<String> {
    header
        .variables
        .iter()
        .map(|v| v.name.clone())
        .filter(|n| n != target && Some(n) != header.mask_variable.as_ref())
        .collect()
}

/// Standardizes with training-range statistics and binarizes the default target.
pub fn prepare_cube(cube: &Datacube, split: &SplitSpec) -> Result<PreparedCube> {
    let stats = compute_standardization(cube, train_time_range(&cube.header, split)?)?;
    let drivers = driver_variables(&cube.header, TARGET_NAME);
    PreparedCube::new(cube, &stats, &drivers, TARGET_NAME)
}

/// Samples of one split; `cap` keeps a seeded uniform subset.
pub fn split_samples(
    cube: &PreparedCube,
    spec: &SampleSpec,
    split: &SplitSpec,
    which: Split,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<SampleRef>> {
    spec.validate()?;
    split.validate()?;
    let refs: Vec<SampleRef> =
        candidates(cube, spec, split).into_iter().filter(|(s, _)| *s == which).map(|(_, r)| r).collect();
    if refs.is_empty() {
        return Err(Error::Data(format!("{which} split has no samples")));
    }
    Ok(match cap {
        Some(n) if n < refs.len() => subsample(&refs, n, seed),
        _ => refs,
    })
}

pub struct TrainedModel {
    pub best: Model,
    pub last: Model,
    pub outcome: TrainOutcome,
}

impl TrainedModel {
    pub fn info(&self, cube: &PreparedCube, spec: &ExperimentSpec) -> CheckpointInfo {
        CheckpointInfo {
            experiment: spec.clone(),
            drivers: cube.driver_names.clone(),
            target: TARGET_NAME.to_string(),
            stats: cube.stats.clone(),
            best_epoch: self.outcome.best_epoch,
        }
    }
}

pub fn run_experiment(cube: &PreparedCube, spec: &ExperimentSpec) -> Result<TrainedModel> {
    spec.train.validate()?;
    let train_refs = split_samples(cube, &spec.sample, &spec.split, Split::Train, None, spec.train.seed)?;
    let val = split_samples(cube, &spec.sample, &spec.split, Split::Val, None, spec.train.seed)?;
    let model = Model::new(spec.model.clone(), spec.sample, cube.n_features(), spec.train.seed)?;
    let mut learner = ForecastLearner::new(model, cube, TrainPool::from_refs(&train_refs), val, &spec.train)?;
    let outcome = train(&mut learner, &spec.train)?;
    let last = learner.model;
    let mut best = last.clone();
    best.params.load_values(&outcome.best_values)?;
    Ok(TrainedModel { best, last, outcome })
}

pub fn evaluate_model(
    model: &Model,
    cube: &PreparedCube,
    split: &SplitSpec,
    which: Split,
    cap: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    let refs = split_samples(cube, &model.spec, split, which, cap, seed)?;
    let scores = model.predict(cube, &refs, 256)?;
    let labels: Vec<u8> = refs.iter().map(|r| r.label).collect();
    EvalReport::from_scores(model.kind().as_str(), &model.spec, which.as_str(), seed, &scores, &labels)
}

pub fn evaluate_baseline(
    baseline: Baseline,
    cube: &PreparedCube,
    spec: &SampleSpec,
    split: &SplitSpec,
    which: Split,
    cap: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    let refs = split_samples(cube, spec, split, which, cap, seed)?;
    let scores = baseline_scores(cube, spec, &refs, baseline)?;
    let labels: Vec<u8> = refs.iter().map(|r| r.label).collect();
    EvalReport::from_scores(baseline.as_str(), spec, which.as_str(), seed, &scores, &labels)
}
