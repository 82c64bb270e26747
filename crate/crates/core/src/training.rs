//! Loss, optimizer, learning-rate schedule and the training loop.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auprc;
use crate::models::Model;
use crate::nn::{bce, Bound, Mode, ParamStore, Tape, Tensor, Var};
use crate::sampling::{Batch, NegativePolicy, PreparedCube, SampleRef, TrainPool};

/// RNG stream offset for dropout, kept clear of the sampling streams.
const DROPOUT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Lengths of the warm-restart cycles; they must add up to `epochs`.
    pub sgdr_cycles: Vec<usize>,
    pub eta_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub negative_policy: NegativePolicy,
    /// Caps the number of training samples visited per epoch.
    pub max_samples_per_epoch: Option<usize>,
    /// Evaluates validation AUPRC on a fixed random subset of this size.
    pub max_val_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 0.01,
            weight_decay: 0.001,
            sgdr_cycles: vec![25, 75],
            eta_min: 0.0,
            batch_size: 64,
            seed: 0,
            negative_policy: NegativePolicy::Ratio(1.0),
            max_samples_per_epoch: None,
            max_val_samples: None,
        }
    }
}

impl TrainConfig {
    /// Same schedule shape compressed to `epochs`: the first cycle keeps a quarter.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        let first = epochs / 4;
        self.sgdr_cycles = if first == 0 { vec![epochs] } else { vec![first, epochs - first] };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.sgdr_cycles.iter().sum::<usize>() != self.epochs || self.sgdr_cycles.contains(&0) {
            return Err(Error::Config(format!(
                "SGDR cycles {:?} must be positive and sum to {} epochs",
                self.sgdr_cycles, self.epochs
            )));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) || !(self.eta_min >= 0.0) || self.eta_min > self.base_lr {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 ≤ eta_min ≤ base_lr, got {} and {}",
                self.eta_min, self.base_lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let NegativePolicy::Ratio(r) = self.negative_policy {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("negative ratio {r} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy of one prediction with the probability clamped to `[ε, 1 − ε]`.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    bce(score, label)
}

/// Cosine-annealed learning rate with warm restarts at every cycle boundary.
pub fn sgdr_lr(epoch: usize, config: &TrainConfig) -> Result<f64> {
    let mut start = 0;
    for &len in &config.sgdr_cycles {
        if epoch < start + len {
            let t_cur = (epoch - start) as f64;
            let cos = (PI * t_cur / len as f64).cos();
            return Ok(config.eta_min + 0.5 * (config.base_lr - config.eta_min) * (1.0 + cos));
        }
        start += len;
    }
    Err(Error::Config(format!("epoch {epoch} is past the last SGDR cycle ({start} epochs)")))
}

/// `w ← w − lr·(g + weight_decay·w)` for every parameter.
pub fn sgd_step(params: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
    if !params.grads_ready() {
        return Err(Error::Config("sgd_step called before gradients were computed".into()));
    }
    for p in params.iter_mut() {
        for (w, g) in p.value.data_mut().iter_mut().zip(&p.grad) {
            *w -= lr * (g + weight_decay * *w);
        }
    }
    Ok(())
}

/// A trainable objective: parameters plus a way to build mini-batch losses.
pub trait Learner {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Prepares epoch `epoch` and returns how many training items it has.
    fn start_epoch(&mut self, epoch: usize, config: &TrainConfig) -> Result<usize>;
    /// Mean loss over the epoch items in `items`.
    fn batch_loss(&self, tape: &mut Tape, p: &Bound, items: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Var>;
    /// Validation score (higher is better); NaN when undefined.
    fn validate(&self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auprc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch with the highest validation score, if any score was defined.
    pub best_epoch: Option<usize>,
    pub best_values: Vec<Tensor>,
}

/// Runs the full schedule; the learner ends with the final-epoch parameters.
pub fn train(learner: &mut impl Learner, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_values = learner.params().values();
    for epoch in 0..config.epochs {
        let lr = sgdr_lr(epoch, config)?;
        let n = learner.start_epoch(epoch, config)?;
        if n == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DROPOUT_STREAM + epoch as u64);
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + config.batch_size).min(n);
            let mut tape = Tape::new();
            let bound = learner.params().bind(&mut tape);
            let loss = learner.batch_loss(&mut tape, &bound, start..end, &mut rng)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, items {start}..{end}"
                )));
            }
            tape.backward(loss)?;
            let params = learner.params_mut();
            params.zero_grads();
            params.accumulate_grads(&tape, &bound);
            sgd_step(params, lr, config.weight_decay)?;
            total += value * (end - start) as f64;
            start = end;
        }
        let val = learner.validate()?;
        if val.is_finite() && best.is_none_or(|(_, b)| val > b) {
            best = Some((epoch, val));
            best_values = learner.params().values();
        }
        log.push(EpochLog { epoch, lr, train_loss: total / n as f64, val_auprc: val });
    }
    if best.is_none() {
        best_values = learner.params().values();
    }
    Ok(TrainOutcome { log, best_epoch: best.map(|(e, _)| e), best_values })
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains a forecasting [`Model`] on samples drawn from a prepared cube.
pub struct ForecastLearner<'a> {
    pub model: Model,
    cube: &'a PreparedCube,
    pool: TrainPool,
    val: Vec<SampleRef>,
    epoch_items: Vec<SampleRef>,
}

impl<'a> ForecastLearner<'a> {
    pub fn new(
        model: Model,
        cube: &'a PreparedCube,
        pool: TrainPool,
        val: Vec<SampleRef>,
        config: &TrainConfig,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let val = match config.max_val_samples {
            Some(cap) if cap < val.len() => subsample(&val, cap, config.seed),
            _ => val,
        };
        Ok(Self { model, cube, pool, val, epoch_items: Vec::new() })
    }

    pub fn val_samples(&self) -> &[SampleRef] {
        &self.val
    }
}

/// A seeded uniform subset of `refs`, kept in the original order.
pub fn subsample(refs: &[SampleRef], n: usize, seed: u64) -> Vec<SampleRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DROPOUT_STREAM - 1);
    let mut idx = rand::seq::index::sample(&mut rng, refs.len(), n.min(refs.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| refs[i]).collect()
}

impl Learner for ForecastLearner<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn start_epoch(&mut self, epoch: usize, config: &TrainConfig) -> Result<usize> {
        let mut items = self.pool.epoch(config.negative_policy, config.seed, epoch as u64);
        if let Some(cap) = config.max_samples_per_epoch {
            items.truncate(cap);
        }
        self.epoch_items = items;
        Ok(self.epoch_items.len())
    }

    fn batch_loss(&self, tape: &mut Tape, p: &Bound, items: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Var> {
        let cells: Vec<_> = self.epoch_items[items].iter().map(|s| s.cell).collect();
        let batch = Batch::gather(self.cube, &self.model.spec, &cells, self.model.graph())?;
        let scores = self.model.forward(tape, p, &batch, Mode::Train, rng)?;
        tape.bce_mean(scores, &batch.labels)
    }

    fn validate(&self) -> Result<f64> {
        if !self.val.iter().any(|s| s.label == 1) {
            return Ok(f64::NAN);
        }
        let scores = self.model.predict(self.cube, &self.val, 256)?;
        let labels: Vec<u8> = self.val.iter().map(|s| s.label).collect();
        auprc(&scores, &labels)
    }
}
