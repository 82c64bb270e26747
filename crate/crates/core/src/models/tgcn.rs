use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, ParamId, ParamStore, SelfAttention, Tape, Tensor, Var};
use crate::sampling::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TgcnConfig {
    /// Widths `(h1, h2)` of the two GCN layers.
    pub gcn_widths: (usize, usize),
    /// Per-vertex recurrent state width.
    pub hidden: usize,
    pub heads: usize,
    pub d_model: usize,
    pub mlp_widths: Vec<usize>,
}

impl Default for TgcnConfig {
    fn default() -> Self {
        Self { gcn_widths: (64, 64), hidden: 64, heads: 4, d_model: 256, mlp_widths: vec![256, 64] }
    }
}

impl TgcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gcn_widths.0 == 0 || self.gcn_widths.1 == 0 || self.hidden == 0 {
            return Err(Error::Config("T-GCN widths must be positive".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "attention width {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.mlp_widths.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }
}

/// Two-layer graph convolution `σ(Â·relu(Â·X·W0)·W1)` without biases.
#[derive(Debug, Clone)]
pub struct Gcn2 {
    pub w0: ParamId,
    pub w1: ParamId,
}

impl Gcn2 {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        widths: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w0: store.add(&format!("{prefix}.w0"), &[input, widths.0], Init::Uniform { fan_in: input }, rng)?,
            w1: store.add(&format!("{prefix}.w1"), &[widths.0, widths.1], Init::Uniform { fan_in: widths.0 }, rng)?,
        })
    }

    /// `ax = Â·X` already propagated (`[B·n, d]`), so the first layer is `relu(ax·W0)`.
    pub fn forward_propagated(
        &self,
        tape: &mut Tape,
        p: &Bound,
        adj: &Arc<Vec<f64>>,
        n: usize,
        ax: Var,
    ) -> Result<Var> {
        let z = tape.dense(ax, p[self.w0], None)?;
        let z = tape.relu(z);
        let zw = tape.dense(z, p[self.w1], None)?;
        let out = tape.propagate(adj.clone(), n, zw)?;
        Ok(tape.sigmoid(out))
    }

    /// `X: [B·n, d]` → `[B·n, h2]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, adj: &Arc<Vec<f64>>, n: usize, x: Var) -> Result<Var> {
        let ax = tape.propagate(adj.clone(), n, x)?;
        self.forward_propagated(tape, p, adj, n, ax)
    }
}

/// Graph-gated recurrent cell:
///
/// ```text
/// u = σ(W_u·(f_u(Â, X) ⊕ h) + b_u)
/// r = σ(W_r·(f_r(Â, X) ⊕ h) + b_r)
/// c = tanh(W_c·(f_c(Â, X) ⊕ (r ⊙ h)) + b_c)
/// h' = u ⊙ h + (1 − u) ⊙ c
/// ```
///
/// `f_u`, `f_r`, `f_c` are independent [`Gcn2`] instances.
#[derive(Debug, Clone)]
pub struct TgcnCell {
    pub hidden: usize,
    pub gcn_u: Gcn2,
    pub gcn_r: Gcn2,
    pub gcn_c: Gcn2,
    pub w_u: ParamId,
    pub b_u: ParamId,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

impl TgcnCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        widths: (usize, usize),
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let gcn_u = Gcn2::register(store, &format!("{prefix}.f_u"), input, widths, rng)?;
        let gcn_r = Gcn2::register(store, &format!("{prefix}.f_r"), input, widths, rng)?;
        let gcn_c = Gcn2::register(store, &format!("{prefix}.f_c"), input, widths, rng)?;
        let cat = widths.1 + hidden;
        let init = Init::Uniform { fan_in: cat };
        let mut gate = |name: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add(&format!("{prefix}.w_{name}"), &[cat, hidden], init, rng)?,
                store.add(&format!("{prefix}.b_{name}"), &[hidden], init, rng)?,
            ))
        };
        let (w_u, b_u) = gate("u")?;
        let (w_r, b_r) = gate("r")?;
        let (w_c, b_c) = gate("c")?;
        Self::from_parts(hidden, [gcn_u, gcn_r, gcn_c], [(w_u, b_u), (w_r, b_r), (w_c, b_c)])
    }

    /// Assembles a cell, rejecting any parameter tensor used by more than one GCN.
    pub fn from_parts(hidden: usize, gcns: [Gcn2; 3], gates: [(ParamId, ParamId); 3]) -> Result<Self> {
        let mut seen = HashSet::new();
        for g in &gcns {
            for id in [g.w0, g.w1] {
                if !seen.insert(id) {
                    return Err(Error::Config("the update, reset and candidate GCNs must not share parameters".into()));
                }
            }
        }
        let [gcn_u, gcn_r, gcn_c] = gcns;
        let [(w_u, b_u), (w_r, b_r), (w_c, b_c)] = gates;
        Ok(Self { hidden, gcn_u, gcn_r, gcn_c, w_u, b_u, w_r, b_r, w_c, b_c })
    }

    /// `x: [B·n, d]`, `h: [B·n, hidden]` → `[B·n, hidden]`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, adj: &Arc<Vec<f64>>, n: usize, x: Var, h: Var) -> Result<Var> {
        // Â·X is shared by the three GCNs.
        let ax = tape.propagate(adj.clone(), n, x)?;
        let fu = self.gcn_u.forward_propagated(tape, p, adj, n, ax)?;
        let fr = self.gcn_r.forward_propagated(tape, p, adj, n, ax)?;
        let fc = self.gcn_c.forward_propagated(tape, p, adj, n, ax)?;
        let cu = tape.concat(&[fu, h])?;
        let u = tape.dense(cu, p[self.w_u], Some(p[self.b_u]))?;
        let u = tape.sigmoid(u);
        let cr = tape.concat(&[fr, h])?;
        let r = tape.dense(cr, p[self.w_r], Some(p[self.b_r]))?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cc = tape.concat(&[fc, rh])?;
        let c = tape.dense(cc, p[self.w_c], Some(p[self.b_c]))?;
        let c = tape.tanh(c);
        let uh = tape.mul(u, h)?;
        let keep = tape.one_minus(u);
        let uc = tape.mul(keep, c)?;
        tape.add(uh, uc)
    }
}

#[derive(Debug, Clone)]
pub struct Tgcn {
    pub config: TgcnConfig,
    pub n: usize,
    pub cell: TgcnCell,
    pub attention: SelfAttention,
    /// Learned per-vertex pooling weights `[n]`.
    pub pool: ParamId,
    pub readout: Mlp,
}

impl Tgcn {
    pub fn register(
        store: &mut ParamStore,
        config: &TgcnConfig,
        n_features: usize,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let cell = TgcnCell::register(store, "tgcn", n_features, config.gcn_widths, config.hidden, rng)?;
        let attention = SelfAttention::register(store, "attention", config.hidden, config.d_model, config.heads, rng)?;
        let pool = store.add("pool.w", &[n], Init::Constant(1.0), rng)?;
        let readout = Mlp::register(store, "readout", config.d_model, &config.mlp_widths, rng)?;
        Ok(Self { config: config.clone(), n, cell, attention, pool, readout })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Var> {
        let graph = batch.graph.as_ref().ok_or_else(|| Error::Data("T-GCN samples must carry a grid graph".into()))?;
        if graph.n != self.n || batch.side * batch.side != self.n {
            return Err(Error::shape("tgcn", format!("model expects {} vertices, batch has {}", self.n, graph.n)));
        }
        let rows = batch.size * self.n;
        let adj = &graph.adjacency_norm;
        let mut h = tape.constant(Tensor::zeros(&[rows, self.config.hidden]));
        for t in 0..batch.ts {
            let x = tape.constant(Tensor::new(&[rows, batch.n_features], batch.step_vertices(t))?);
            h = self.cell.step(tape, p, adj, self.n, x, h)?;
        }
        let att = self.attention.forward(tape, p, h, self.n)?;
        let pooled = tape.weighted_pool(att, p[self.pool], self.n)?;
        let logit = self.readout.forward(tape, p, pooled)?;
        Ok(tape.sigmoid(logit))
    }
}
