//! Parameterised building blocks evaluated on a [`Tape`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Gelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => Ok(tape.tanh(x)),
            Activation::Gelu => gelu(tape, x),
        }
    }
}

/// tanh approximation of GELU.
pub fn gelu(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let x2 = tape.square(x);
    let x3 = tape.mul(x2, x)?;
    let cubic = tape.scale(x3, 0.044715);
    let inner = tape.add(x, cubic)?;
    let inner = tape.scale(inner, c);
    let th = tape.tanh(inner);
    let one_plus = tape.add_scalar(th, 1.0);
    let half_x = tape.scale(x, 0.5);
    tape.mul(half_x, one_plus)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// U(−1/√fan_in, 1/√fan_in).
    Uniform,
    Zeros,
}

pub(crate) fn init_tensor(
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    match init {
        Init::Uniform => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
        }
        Init::Zeros => Tensor::zeros(shape.to_vec()),
    }
}

#[inline]
pub(crate) fn pv(vars: &[Var], id: ParamId) -> Var {
    vars[id.index()]
}

/// Affine map over the last axis: `x · W + b`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            init_tensor(&[fan_in, fan_out], fan_in, init, rng),
        );
        let b = bias.then(|| {
            let bias_init = if init == Init::Uniform {
                Init::Uniform
            } else {
                Init::Zeros
            };
            ps.add(
                format!("{name}.b"),
                init_tensor(&[fan_out], fan_in, bias_init, rng),
            )
        });
        Self { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, pv(vars, self.w))?;
        match self.b {
            Some(b) => tape.add(y, pv(vars, b)),
            None => Ok(y),
        }
    }
}

/// RMS normalisation over the last axis of `[B, N, C]` tokens, modulated per
/// batch element by `1 + scale` where `scale` is `[B, 1, C]`.
pub(crate) fn ada_rms_norm(tape: &mut Tape, x: Var, scale: Var) -> Result<Var> {
    let rank = tape.shape(x).len();
    let sq = tape.square(x);
    let ms = tape.mean_axis(sq, rank - 1)?;
    let ms = tape.add_scalar(ms, 1e-6);
    let rms = tape.sqrt(ms)?;
    let normed = tape.div(x, rms)?;
    let gain = tape.add_scalar(scale, 1.0);
    tape.mul(normed, gain)
}
