//! Minimal differentiable tensor operations and reverse-mode gradients.

mod attention;
mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

use rand::Rng;

pub use attention::SelfAttention;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Bound, Init, Param, ParamId, ParamStore};
pub use tape::{bce, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in training mode zeroes each unit with probability `p`
/// and scales survivors by `1/(1−p)`; identity in evaluation mode.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.value(x).len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    tape.scale_mask(x, mask)
}
