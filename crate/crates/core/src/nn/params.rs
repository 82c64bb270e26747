//! Named trainable parameters with gradient buffers, and their checkpoint file.
//!
//! Checkpoint layout:
//!
//! ```text
//! u64 LE      length L of the header
//! L bytes     UTF-8 JSON {"format", "version", "params": [{"name", "shape"}], "meta"}
//! ...         every parameter as float64 LE, concatenated in header order
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "firecast-params";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on `(−1/√fan_in, 1/√fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub init: Init,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    grads_ready: bool,
}

/// Parameters of a store placed on a tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let value = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
            }
            Init::Constant(c) => Tensor::full(shape, c),
        };
        let grad = vec![0.0; value.len()];
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, grad, init });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.params.iter().map(|p| tape.param(p.value.clone())).collect())
    }

    /// Adds the tape's gradients for `bound` into the gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(v) {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        self.grads_ready = true;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Marks gradient buffers as populated after filling them by hand.
    pub fn set_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    /// Values only, for snapshotting and restoring.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Data("parameter count mismatch".into()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Data(format!("shape mismatch for {}", p.name)));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self, meta: &serde_json::Value) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            params: self
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
                .collect(),
            meta: meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + json.len() + self.num_scalars() * 8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint into a store (with `Constant(0)` init tags) and its metadata.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let bad = |m: &str| Error::Data(format!("checkpoint: {m}"));
        if bytes.len() < 8 {
            return Err(bad("truncated"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad("unknown format"));
        }
        let mut data = &bytes[8 + hlen..];
        let mut store = ParamStore::new();
        for entry in header.params {
            let len: usize = entry.shape.iter().product();
            if data.len() < len * 8 {
                return Err(bad("truncated data"));
            }
            let values =
                data[..len * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            data = &data[len * 8..];
            if store.index.contains_key(&entry.name) {
                return Err(bad("duplicate parameter"));
            }
            store.index.insert(entry.name.clone(), store.params.len());
            store.params.push(Param {
                name: entry.name,
                value: Tensor::new(&entry.shape, values)?,
                grad: vec![0.0; len],
                init: Init::Constant(0.0),
            });
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok((store, header.meta))
    }

    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        fs::write(path, self.to_bytes(meta)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    params: Vec<ParamEntry>,
    meta: serde_json::Value,
}
