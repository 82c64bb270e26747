use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Multi-head self-attention with learned Q/K/V and output projections.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub heads: usize,
    pub d_model: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

impl SelfAttention {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("attention width {d_model} is not divisible by {heads} heads")));
        }
        let inp = Init::Uniform { fan_in: d_in };
        let out = Init::Uniform { fan_in: d_model };
        Ok(Self {
            heads,
            d_model,
            wq: store.add(&format!("{prefix}.wq"), &[d_in, d_model], inp, rng)?,
            bq: store.add(&format!("{prefix}.bq"), &[d_model], inp, rng)?,
            wk: store.add(&format!("{prefix}.wk"), &[d_in, d_model], inp, rng)?,
            bk: store.add(&format!("{prefix}.bk"), &[d_model], inp, rng)?,
            wv: store.add(&format!("{prefix}.wv"), &[d_in, d_model], inp, rng)?,
            bv: store.add(&format!("{prefix}.bv"), &[d_model], inp, rng)?,
            wo: store.add(&format!("{prefix}.wo"), &[d_model, d_model], out, rng)?,
            bo: store.add(&format!("{prefix}.bo"), &[d_model], out, rng)?,
        })
    }

    /// `x: [B·group, d_in]` → `[B·group, d_model]`; rows attend only within their group.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, group: usize) -> Result<Var> {
        let q = tape.dense(x, p[self.wq], Some(p[self.bq]))?;
        let k = tape.dense(x, p[self.wk], Some(p[self.bk]))?;
        let v = tape.dense(x, p[self.wv], Some(p[self.bv]))?;
        let att = tape.attention(q, k, v, group, self.heads)?;
        tape.dense(att, p[self.wo], Some(p[self.bo]))
    }

    /// Parameter ids in (wq, bq, wk, bk, wv, bv, wo, bo) order.
    pub fn param_ids(&self) -> [ParamId; 8] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]
    }
}
