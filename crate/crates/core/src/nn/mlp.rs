use rand_chacha::ChaCha8Rng;

use super::layers::{Activation, Init, Linear};
use super::TimeEmbedding;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time: TimeEmbedding,
    /// Start with an all-zero output layer (the field is then identically zero).
    pub zero_output: bool,
}

impl MlpConfig {
    pub fn toy(data_dim: usize) -> Self {
        Self {
            data_dim,
            hidden: vec![64, 64, 64],
            activation: Activation::Gelu,
            time: TimeEmbedding::new(16, 30.0),
            zero_output: false,
        }
    }
}

/// Fully connected velocity field on `[x, embed(t)]`.
#[derive(Clone, Debug)]
pub struct MlpVelocity {
    config: MlpConfig,
    layers: Vec<Linear>,
}

impl MlpVelocity {
    pub(crate) fn build(config: MlpConfig, ps: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let mut widths = vec![config.data_dim + config.time.dim];
        widths.extend(&config.hidden);
        widths.push(config.data_dim);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n && config.zero_output {
                    Init::Zeros
                } else {
                    Init::Uniform
                };
                Linear::new(
                    ps,
                    &format!("mlp.{i}"),
                    widths[i],
                    widths[i + 1],
                    true,
                    init,
                    rng,
                )
            })
            .collect();
        Self { config, layers }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// `x: [B, d]`, one time per batch row.
    pub(crate) fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, t: &[f64]) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.data_dim || shape[0] != t.len() {
            return Err(Error::shape(
                "mlp forward",
                &shape,
                &[t.len(), self.config.data_dim],
            ));
        }
        let temb = tape.constant(self.config.time.embed_batch(t));
        let mut h = tape.concat(&[x, temb], 1)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, vars, h)?;
            if i < last {
                h = self.config.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}
