use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::sampling::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvLstmConfig {
    pub hidden: usize,
    pub kernel: usize,
    /// Hidden widths of the readout MLP; a final width-1 layer is always appended.
    pub mlp_widths: Vec<usize>,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        Self { hidden: 16, kernel: 3, mlp_widths: vec![256, 64] }
    }
}

impl ConvLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("Conv-LSTM needs at least one hidden channel".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.mlp_widths.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }
}

/// Conv-LSTM cell without peephole terms:
///
/// ```text
/// i = σ(W_xi * X + W_hi * H + b_i)     f = σ(W_xf * X + W_hf * H + b_f)
/// o = σ(W_xo * X + W_ho * H + b_o)     g = tanh(W_xg * X + W_hg * H + b_g)
/// C' = f ⊙ C + i ⊙ g                   H' = o ⊙ tanh(C')
/// ```
///
/// The four gates are stored fused along the output-channel axis in `(i, f, o, g)` order.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub input: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// `[4C, F, k, k]`
    pub w_x: ParamId,
    /// `[4C, C, k, k]`
    pub w_h: ParamId,
    /// `[4C]`
    pub b: ParamId,
}

impl ConvLstmCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let init = Init::Uniform { fan_in: (input + hidden) * kernel * kernel };
        let k = kernel;
        Ok(Self {
            input,
            hidden,
            kernel,
            w_x: store.add(&format!("{prefix}.w_x"), &[4 * hidden, input, k, k], init, rng)?,
            w_h: store.add(&format!("{prefix}.w_h"), &[4 * hidden, hidden, k, k], init, rng)?,
            b: store.add(&format!("{prefix}.b"), &[4 * hidden], init, rng)?,
        })
    }

    /// `x: [B, F, G, G]`, `h, c: [B, C, G, G]` → `(h', c')`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        // W_x * X + W_h * H as one convolution over the stacked channels.
        let kernel = tape.concat(&[p[self.w_x], p[self.w_h]])?;
        let xh = tape.concat(&[x, h])?;
        let gates = tape.conv2d_same(xh, kernel, Some(p[self.b]))?;
        let i = tape.slice(gates, 0, hd)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(gates, hd, hd)?;
        let f = tape.sigmoid(f);
        let o = tape.slice(gates, 2 * hd, hd)?;
        let o = tape.sigmoid(o);
        let g = tape.slice(gates, 3 * hd, hd)?;
        let g = tape.tanh(g);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

#[derive(Debug, Clone)]
pub struct ConvLstm {
    pub config: ConvLstmConfig,
    pub side: usize,
    pub cell: ConvLstmCell,
    pub readout: Mlp,
}

impl ConvLstm {
    pub fn register(
        store: &mut ParamStore,
        config: &ConvLstmConfig,
        n_features: usize,
        side: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let cell = ConvLstmCell::register(store, "convlstm", n_features, config.hidden, config.kernel, rng)?;
        let readout = Mlp::register(store, "readout", config.hidden * side * side, &config.mlp_widths, rng)?;
        Ok(Self { config: config.clone(), side, cell, readout })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Var> {
        if batch.side != self.side {
            return Err(Error::shape(
                "convlstm",
                format!("model expects a {0}×{0} window, got {1}×{1}", self.side, batch.side),
            ));
        }
        let (b, g) = (batch.size, batch.side);
        let state = [b, self.config.hidden, g, g];
        let mut h = tape.constant(Tensor::zeros(&state));
        let mut c = tape.constant(Tensor::zeros(&state));
        for t in 0..batch.ts {
            let x = tape.constant(Tensor::new(&[b, batch.n_features, g, g], batch.step_images(t))?);
            (h, c) = self.cell.step(tape, p, x, h, c)?;
        }
        let flat = tape.reshape(h, &[b, self.config.hidden * g * g])?;
        let logit = self.readout.forward(tape, p, flat)?;
        Ok(tape.sigmoid(logit))
    }
}
