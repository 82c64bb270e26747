//! Spatio-temporal wildfire-occurrence forecasting on gridded datacubes.
//!
//! The crate covers the full pipeline: a portable datacube format with a
//! synthetic generator ([`cube`]), sample extraction and grid graphs
//! ([`sampling`]), a small reverse-mode autodiff engine ([`nn`]), GRU,
//! Conv-LSTM and T-GCN classifiers ([`models`]), SGD training with warm
//! restarts ([`training`]) and AUPRC evaluation against seasonal baselines
//! ([`metrics`]).

pub mod cube;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod sampling;
pub mod training;

pub use cube::{CellTime, CubeHeader, Datacube};
pub use error::{Error, Result};
pub use models::{Model, ModelConfig, ModelKind};
pub use sampling::{GridGraph, Sample, SampleSpec};
pub use training::TrainConfig;
