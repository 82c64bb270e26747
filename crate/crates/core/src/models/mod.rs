//! GRU, Conv-LSTM and T-GCN fire-occurrence classifiers.

mod convlstm;
mod gru;
mod mlp;
mod tgcn;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use convlstm::{ConvLstm, ConvLstmCell, ConvLstmConfig};
pub use gru::{Gru, GruConfig, GruLayer};
pub use mlp::Mlp;
pub use tgcn::{Gcn2, Tgcn, TgcnCell, TgcnConfig};

use crate::error::{Error, Result};
use crate::nn::{Bound, Mode, ParamStore, Tape, Var};
use crate::sampling::{build_grid_graph, Batch, GridGraph, PreparedCube, SampleRef, SampleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gru,
    ConvLstm,
    Tgcn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gru => "gru",
            ModelKind::ConvLstm => "convlstm",
            ModelKind::Tgcn => "tgcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(ModelKind::Gru),
            "convlstm" => Ok(ModelKind::ConvLstm),
            "tgcn" => Ok(ModelKind::Tgcn),
            _ => Err(Error::Config(format!("unknown model {s:?} (expected gru, convlstm or tgcn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Gru(GruConfig),
    ConvLstm(ConvLstmConfig),
    Tgcn(TgcnConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Gru => ModelConfig::Gru(GruConfig::default()),
            ModelKind::ConvLstm => ModelConfig::ConvLstm(ConvLstmConfig::default()),
            ModelKind::Tgcn => ModelConfig::Tgcn(TgcnConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Gru(_) => ModelKind::Gru,
            ModelConfig::ConvLstm(_) => ModelKind::ConvLstm,
            ModelConfig::Tgcn(_) => ModelKind::Tgcn,
        }
    }
}

#[derive(Debug, Clone)]
enum Net {
    Gru(Gru),
    ConvLstm(ConvLstm),
    Tgcn(Tgcn),
}

/// A model architecture together with its parameters and input geometry.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub spec: SampleSpec,
    pub n_features: usize,
    pub params: ParamStore,
    graph: Option<Arc<GridGraph>>,
    net: Net,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    spec: SampleSpec,
    n_features: usize,
}

impl Model {
    /// Builds a freshly initialized model; initialization is a pure function of `seed`.
    pub fn new(config: ModelConfig, spec: SampleSpec, n_features: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_features == 0 {
            return Err(Error::Config("models need at least one input feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let side = spec.side();
        let mut graph = None;
        let net = match &config {
            ModelConfig::Gru(c) => {
                if spec.r != 0 {
                    return Err(Error::Config(format!("GRU requires r = 0, got r = {}", spec.r)));
                }
                Net::Gru(Gru::register(&mut params, c, n_features, &mut rng)?)
            }
            ModelConfig::ConvLstm(c) => Net::ConvLstm(ConvLstm::register(&mut params, c, n_features, side, &mut rng)?),
            ModelConfig::Tgcn(c) => {
                let g = build_grid_graph(spec.r, spec.k)?;
                let net = Tgcn::register(&mut params, c, n_features, g.n, &mut rng)?;
                graph = Some(Arc::new(g));
                Net::Tgcn(net)
            }
        };
        Ok(Self { config, spec, n_features, params, graph, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    /// Grid graph the model's samples must carry (T-GCN only).
    pub fn graph(&self) -> Option<Arc<GridGraph>> {
        self.graph.clone()
    }

    /// Scores `[B, 1]` in `(0, 1)`. `rng` drives dropout in training mode.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if batch.n_features != self.n_features || batch.ts != self.spec.ts {
            return Err(Error::shape(
                "model",
                format!(
                    "model expects ts = {}, F = {}; batch has ts = {}, F = {}",
                    self.spec.ts, self.n_features, batch.ts, batch.n_features
                ),
            ));
        }
        if batch.size == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        match &self.net {
            Net::Gru(m) => m.forward(tape, p, batch, mode, rng),
            Net::ConvLstm(m) => m.forward(tape, p, batch),
            Net::Tgcn(m) => m.forward(tape, p, batch),
        }
    }

    /// Evaluation-mode scores for one batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Evaluation-mode scores for samples drawn from `cube`, in `refs` order.
    pub fn predict(&self, cube: &PreparedCube, refs: &[SampleRef], batch_size: usize) -> Result<Vec<f64>> {
        let mut scores = Vec::with_capacity(refs.len());
        let cells: Vec<_> = refs.iter().map(|r| r.cell).collect();
        for chunk in cells.chunks(batch_size.max(1)) {
            let batch = Batch::gather(cube, &self.spec, chunk, self.graph())?;
            scores.extend(self.predict_batch(&batch)?);
        }
        Ok(scores)
    }

    /// Checkpoint bytes: parameters plus the architecture and `extra` metadata.
    pub fn to_bytes(&self, extra: &serde_json::Value) -> Result<Vec<u8>> {
        let header = ModelHeader { config: self.config.clone(), spec: self.spec, n_features: self.n_features };
        let meta = serde_json::json!({
            "model": serde_json::to_value(&header).map_err(|e| Error::Data(e.to_string()))?,
            "extra": extra,
        });
        self.params.to_bytes(&meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (store, meta) = ParamStore::from_bytes(bytes)?;
        let header: ModelHeader = serde_json::from_value(meta.get("model").cloned().unwrap_or_default())
            .map_err(|e| Error::Data(format!("checkpoint model header: {e}")))?;
        let mut model = Self::new(header.config, header.spec, header.n_features, 0)?;
        if model.params.len() != store.len() {
            return Err(Error::Data("checkpoint parameters do not match the architecture".into()));
        }
        for (p, q) in model.params.iter().zip(store.iter()) {
            if p.name != q.name {
                return Err(Error::Data(format!("checkpoint parameter {} where {} expected", q.name, p.name)));
            }
        }
        model.params.load_values(&store.values())?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, extra))
    }

    pub fn save(&self, path: &Path, extra: &serde_json::Value) -> Result<()> {
        std::fs::write(path, self.to_bytes(extra)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
