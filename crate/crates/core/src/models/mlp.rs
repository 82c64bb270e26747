use rand::Rng;

use crate::error::Result;
use crate::nn::{Bound, Init, ParamId, ParamStore, Tape, Var};

/// Dense stack with relu between layers, ending in a single linear output unit.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for (l, &width) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let init = Init::Uniform { fan_in };
            let w = store.add(&format!("{prefix}.{l}.w"), &[fan_in, width], init, rng)?;
            let b = store.add(&format!("{prefix}.{l}.b"), &[width], init, rng)?;
            layers.push((w, b));
            fan_in = width;
        }
        Ok(Self { layers })
    }

    /// `x: [B, input]` → logits `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut y = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            y = tape.dense(y, p[w], Some(p[b]))?;
            if l + 1 < self.layers.len() {
                y = tape.relu(y);
            }
        }
        Ok(y)
    }
}
