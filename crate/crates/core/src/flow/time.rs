use rand::Rng;

use crate::error::{Error, Result};

/// Distribution of training timesteps on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeDist {
    Uniform,
    /// Density ∝ cosh(a(t − 1/2)), heavier near both endpoints.
    UShaped {
        a: f64,
    },
}

impl TimeDist {
    pub const DEFAULT_SHAPE: f64 = 4.0;

    pub fn u_shaped() -> Self {
        TimeDist::UShaped {
            a: Self::DEFAULT_SHAPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeDist::UShaped { a } if !(a > 0.0 && a.is_finite()) => Err(Error::invalid(format!(
                "U-shape parameter must be positive, got {a}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match *self {
            TimeDist::Uniform => 1.0,
            TimeDist::UShaped { a } => a * (a * (t - 0.5)).cosh() / (2.0 * (a / 2.0).sinh()),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            TimeDist::Uniform => t,
            TimeDist::UShaped { a } => {
                let s = (a / 2.0).sinh();
                ((a * (t - 0.5)).sinh() + s) / (2.0 * s)
            }
        }
    }

    /// Closed-form quantile function.
    pub fn inverse_cdf(&self, f: f64) -> f64 {
        let f = f.clamp(0.0, 1.0);
        match *self {
            TimeDist::Uniform => f,
            TimeDist::UShaped { a } => {
                let t = 0.5 + ((2.0 * f - 1.0) * (a / 2.0).sinh()).asinh() / a;
                t.clamp(0.0, 1.0)
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TimeDist::Uniform => "uniform".into(),
            TimeDist::UShaped { a } => format!("u-shaped:{a}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let d = match s.split_once(':') {
            None if s == "uniform" => TimeDist::Uniform,
            None if s == "u-shaped" => TimeDist::u_shaped(),
            Some(("u-shaped", a)) => TimeDist::UShaped {
                a: a.parse()
                    .map_err(|_| Error::Config(format!("bad U-shape parameter {a:?}")))?,
            },
            _ => return Err(Error::Config(format!("unknown time distribution {s:?}"))),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Draws one timestep by inverse-CDF sampling.
pub fn sample_timestep<R: Rng + ?Sized>(dist: &TimeDist, rng: &mut R) -> f64 {
    dist.inverse_cdf(rng.random::<f64>())
}
