use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dropout, Bound, Init, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::sampling::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GruConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Dropout between stacked layers (training mode only).
    pub dropout: f64,
}

impl Default for GruConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 64, dropout: 0.1 }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("GRU needs at least one layer and one hidden unit".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One GRU layer with fused gate weights in `(r, z, n)` column order:
///
/// ```text
/// r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// z  = σ(x·W_iz + b_iz + h·W_hz + b_hz)
/// n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl GruLayer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let init = Init::Uniform { fan_in: hidden };
        Ok(Self {
            input,
            hidden,
            w_ih: store.add(&format!("{prefix}.w_ih"), &[input, 3 * hidden], init, rng)?,
            w_hh: store.add(&format!("{prefix}.w_hh"), &[hidden, 3 * hidden], init, rng)?,
            b_ih: store.add(&format!("{prefix}.b_ih"), &[3 * hidden], init, rng)?,
            b_hh: store.add(&format!("{prefix}.b_hh"), &[3 * hidden], init, rng)?,
        })
    }

    /// `x: [B, input]`, `h: [B, hidden]` → `[B, hidden]`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gi = tape.dense(x, p[self.w_ih], Some(p[self.b_ih]))?;
        let gh = tape.dense(h, p[self.w_hh], Some(p[self.b_hh]))?;
        let (ir, iz, inn) = (tape.slice(gi, 0, hd)?, tape.slice(gi, hd, hd)?, tape.slice(gi, 2 * hd, hd)?);
        let (hr, hz, hn) = (tape.slice(gh, 0, hd)?, tape.slice(gh, hd, hd)?, tape.slice(gh, 2 * hd, hd)?);
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn)?;
        let n = tape.add(inn, rh)?;
        let n = tape.tanh(n);
        let keep = tape.one_minus(z);
        let a = tape.mul(keep, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

#[derive(Debug, Clone)]
pub struct Gru {
    pub config: GruConfig,
    pub layers: Vec<GruLayer>,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl Gru {
    pub fn register(store: &mut ParamStore, config: &GruConfig, n_features: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { n_features } else { config.hidden };
            layers.push(GruLayer::register(store, &format!("gru.{l}"), input, config.hidden, rng)?);
        }
        let init = Init::Uniform { fan_in: config.hidden };
        Ok(Self {
            config: config.clone(),
            layers,
            w_out: store.add("head.w", &[config.hidden, 1], init, rng)?,
            b_out: store.add("head.b", &[1], init, rng)?,
        })
    }

    /// Scores `[B, 1]` for a batch of single-cell samples.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if batch.side != 1 {
            return Err(Error::shape("gru", format!("needs a 1×1 window, got {0}×{0}", batch.side)));
        }
        let b = batch.size;
        let mut seq: Vec<Var> = (0..batch.ts)
            .map(|t| {
                let x = Tensor::new(&[b, batch.n_features], batch.step_vertices(t))?;
                Ok(tape.constant(x))
            })
            .collect::<Result<_>>()?;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                for x in seq.iter_mut() {
                    *x = dropout(tape, *x, self.config.dropout, mode, rng)?;
                }
            }
            let mut h = tape.constant(Tensor::zeros(&[b, layer.hidden]));
            let mut out = Vec::with_capacity(seq.len());
            for &x in &seq {
                h = layer.step(tape, p, x, h)?;
                out.push(h);
            }
            seq = out;
        }
        let last = *seq.last().ok_or_else(|| Error::shape("gru", "empty sequence"))?;
        let logit = tape.dense(last, p[self.w_out], Some(p[self.b_out]))?;
        Ok(tape.sigmoid(logit))
    }
}
