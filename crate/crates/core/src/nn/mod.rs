//! Velocity estimators `v(x_t, t)`.

mod attention;
mod embed;
mod hourglass;
mod layers;
mod mlp;
pub mod patch;
pub mod rope;
pub mod window;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{skip_fusion, skip_fusion_values, AttentionGeometry, AttentionLayer};
pub use embed::TimeEmbedding;
pub use hourglass::{HourglassConfig, HourglassVelocity};
pub use layers::{gelu, Activation};
pub use mlp::{MlpConfig, MlpVelocity};

use crate::error::{Error, Result};
use crate::lidar::BeamTable;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// A time-dependent vector field over batches of states.
pub trait VelocityField {
    /// Shape of one state (without the batch axis).
    fn sample_shape(&self) -> Vec<usize>;

    /// `x: [B, ...sample_shape]` with one time per batch element. Non-finite
    /// outputs are returned as is; integrators decide how to fail.
    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn sample_shape(&self) -> Vec<usize> {
        (**self).sample_shape()
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        (**self).velocity(x, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Hourglass(HourglassConfig),
}

#[derive(Clone, Debug)]
enum Arch {
    Mlp(MlpVelocity),
    Hourglass(HourglassVelocity),
}

/// Trainable velocity network together with its parameters.
#[derive(Clone, Debug)]
pub struct VelocityModel {
    config: ModelConfig,
    arch: Arch,
    params: ParamStore,
}

impl VelocityModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = match &config {
            ModelConfig::Mlp(c) => {
                if c.data_dim == 0 {
                    return Err(Error::invalid("MLP data dimension must be positive"));
                }
                Arch::Mlp(MlpVelocity::build(c.clone(), &mut params, &mut rng))
            }
            ModelConfig::Hourglass(c) => {
                Arch::Hourglass(HourglassVelocity::build(c.clone(), &mut params, &mut rng)?)
            }
        };
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn hourglass(&self) -> Option<&HourglassVelocity> {
        match &self.arch {
            Arch::Hourglass(h) => Some(h),
            Arch::Mlp(_) => None,
        }
    }

    /// Differentiable forward pass; `vars` come from `self.params().bind(tape)`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, t: &[f64]) -> Result<Var> {
        match &self.arch {
            Arch::Mlp(m) => m.forward(tape, vars, x, t),
            Arch::Hourglass(h) => h.forward(tape, vars, x, t),
        }
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        config_to_metadata(&self.config)
    }

    /// Rebuilds a model from checkpoint metadata and named parameters.
    pub fn from_parts(
        meta: &BTreeMap<String, String>,
        tensors: &[(String, Tensor)],
    ) -> Result<Self> {
        let config = config_from_metadata(meta)?;
        let mut model = Self::new(config, 0)?;
        model.params.load_from(tensors)?;
        Ok(model)
    }
}

impl VelocityField for VelocityModel {
    fn sample_shape(&self) -> Vec<usize> {
        match &self.arch {
            Arch::Mlp(m) => vec![m.config().data_dim],
            Arch::Hourglass(h) => h.sample_shape(),
        }
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let vars = self.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv, t)?;
        Ok(tape.value(y).clone())
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn config_to_metadata(config: &ModelConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(format!("model.{k}"), v);
    };
    match config {
        ModelConfig::Mlp(c) => {
            put("kind", "mlp".into());
            put("data_dim", c.data_dim.to_string());
            put("hidden", join(&c.hidden));
            put("activation", c.activation.name().into());
            put("time_dim", c.time.dim.to_string());
            put("time_base", c.time.base.to_string());
            put("zero_output", c.zero_output.to_string());
        }
        ModelConfig::Hourglass(c) => {
            put("kind", "hourglass".into());
            put("height", c.height.to_string());
            put("width", c.width.to_string());
            put("widths", join(&c.widths));
            put("depth", c.depth.to_string());
            put("head_dim", c.head_dim.to_string());
            put("ffn_mult", c.ffn_mult.to_string());
            put("window", format!("{}x{}", c.window.0, c.window.1));
            put("time_dim", c.time.dim.to_string());
            put("time_base", c.time.base.to_string());
            put("ape", c.ape.to_string());
            put("beams", join(c.beams.elevations()));
            put("zero_output", c.zero_output.to_string());
        }
    }
    m
}

fn config_from_metadata(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        meta.get(&format!("model.{k}"))
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks model.{k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("model.{k}: cannot parse {v:?}")))
    }
    fn list<T: std::str::FromStr>(k: &str, v: &str) -> Result<Vec<T>> {
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|s| num(k, s.trim())).collect()
    }
    let time = TimeEmbedding::new(
        num("time_dim", get("time_dim")?)?,
        num("time_base", get("time_base")?)?,
    );
    match get("kind")? {
        "mlp" => Ok(ModelConfig::Mlp(MlpConfig {
            data_dim: num("data_dim", get("data_dim")?)?,
            hidden: list("hidden", get("hidden")?)?,
            activation: Activation::parse(get("activation")?)
                .ok_or_else(|| Error::Config("unknown activation".into()))?,
            time,
            zero_output: num("zero_output", get("zero_output")?)?,
        })),
        "hourglass" => {
            let widths: Vec<usize> = list("widths", get("widths")?)?;
            let [w0, w1] = widths[..] else {
                return Err(Error::Config("model.widths needs two entries".into()));
            };
            let window = get("window")?;
            let (wr, wc) = window
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("model.window: {window:?}")))?;
            Ok(ModelConfig::Hourglass(HourglassConfig {
                height: num("height", get("height")?)?,
                width: num("width", get("width")?)?,
                widths: [w0, w1],
                depth: num("depth", get("depth")?)?,
                head_dim: num("head_dim", get("head_dim")?)?,
                ffn_mult: num("ffn_mult", get("ffn_mult")?)?,
                window: (num("window", wr)?, num("window", wc)?),
                time,
                ape: num("ape", get("ape")?)?,
                beams: BeamTable::new(list("beams", get("beams")?)?)?,
                zero_output: num("zero_output", get("zero_output")?)?,
            }))
        }
        other => Err(Error::Config(format!("unknown model kind {other:?}"))),
    }
}
