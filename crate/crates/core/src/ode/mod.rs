//! ODE integration of velocity fields: fixed-step Euler and midpoint,
//! adaptive Dormand–Prince 5(4), sampling, inversion and latent slerp.

mod dopri;
mod export;
pub mod fields;
mod fixed;
mod sample;
mod slerp;

pub use dopri::rk45_fixed;
pub use export::trajectory_csv;
pub use fixed::euler_step;
pub use sample::{invert, sample, sample_from, SampleBatch};
pub use slerp::slerp;

use crate::error::{Error, Result};
use crate::nn::VelocityField;
use crate::tensor::Tensor;

/// Smallest adaptive step before the integrator gives up.
pub const MIN_STEP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Euler {
        steps: usize,
    },
    Midpoint {
        steps: usize,
    },
    /// Dormand–Prince 5(4) with per-sample step control.
    Dopri5 {
        atol: f64,
        rtol: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Direction {
    /// Latent (t = 0) to data (t = 1).
    #[default]
    Forward,
    /// Data (t = 1) to latent (t = 0).
    Reverse,
}

impl Direction {
    pub fn span(self) -> (f64, f64) {
        match self {
            Direction::Forward => (0.0, 1.0),
            Direction::Reverse => (1.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSpec {
    pub method: Method,
    pub direction: Direction,
    pub record: bool,
}

impl SolverSpec {
    pub fn euler(steps: usize) -> Self {
        Self {
            method: Method::Euler { steps },
            direction: Direction::Forward,
            record: false,
        }
    }

    pub fn midpoint(steps: usize) -> Self {
        Self {
            method: Method::Midpoint { steps },
            direction: Direction::Forward,
            record: false,
        }
    }

    pub fn dopri5(atol: f64, rtol: f64) -> Self {
        Self {
            method: Method::Dopri5 { atol, rtol },
            direction: Direction::Forward,
            record: false,
        }
    }

    pub fn reversed(mut self) -> Self {
        self.direction = Direction::Reverse;
        self
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Euler { steps } | Method::Midpoint { steps } if steps == 0 => {
                Err(Error::invalid("fixed-step solver needs at least one step"))
            }
            Method::Dopri5 { atol, rtol } if !(atol > 0.0 && rtol > 0.0) => Err(Error::invalid(
                format!("adaptive tolerances must be positive (atol={atol}, rtol={rtol})"),
            )),
            _ => Ok(()),
        }
    }

    /// Short human-readable description, stored alongside generated data.
    pub fn describe(&self) -> String {
        let dir = match self.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        };
        match self.method {
            Method::Euler { steps } => format!("euler steps={steps} {dir}"),
            Method::Midpoint { steps } => format!("midpoint steps={steps} {dir}"),
            Method::Dopri5 { atol, rtol } => format!("dopri5 atol={atol:e} rtol={rtol:e} {dir}"),
        }
    }
}

/// Time-stamped states of one integrated sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Velocity evaluations spent on this sample.
    pub nfe: usize,
    pub solver: String,
}

/// Result of integrating a batch: end states plus one trajectory per sample.
#[derive(Clone, Debug)]
pub struct Integration {
    pub end: Tensor,
    pub trajectories: Vec<Trajectory>,
}

impl Integration {
    pub fn nfe(&self) -> Vec<usize> {
        self.trajectories.iter().map(|t| t.nfe).collect()
    }
}

/// Integrates every sample of `x_start` (`[B, ...]`) over the span implied by
/// `spec.direction`. Fails if any sample fails.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    x_start: &Tensor,
    spec: &SolverSpec,
) -> Result<Integration> {
    let (t0, t1) = spec.direction.span();
    integrate_span(field, x_start, t0, t1, spec)
}

/// Integrates from `t0` to `t1`; `spec.direction` is ignored in favour of the
/// explicit span. Fixed-step methods use `steps` uniform steps over the span.
pub fn integrate_span<F: VelocityField + ?Sized>(
    field: &F,
    x_start: &Tensor,
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
) -> Result<Integration> {
    let outcomes = integrate_span_each(field, x_start, t0, t1, spec)?;
    let mut ends = Vec::with_capacity(outcomes.len());
    let mut trajectories = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (end, traj) = o?;
        ends.push(end);
        trajectories.push(traj);
    }
    Ok(Integration {
        end: assemble(x_start.shape(), ends)?,
        trajectories,
    })
}

/// Per-sample outcome: end state and trajectory, or the failure of that sample.
pub type SampleOutcome = Result<(Vec<f64>, Trajectory)>;

/// Like [`integrate_span`] but reports failures per sample instead of
/// aborting the batch. Errors only for invalid arguments or field errors that
/// concern the whole batch.
pub fn integrate_span_each<F: VelocityField + ?Sized>(
    field: &F,
    x_start: &Tensor,
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
) -> Result<Vec<SampleOutcome>> {
    spec.validate()?;
    check_batch(field, x_start)?;
    if t0 == t1 {
        return Err(Error::invalid("integration span has zero length"));
    }
    match spec.method {
        Method::Euler { steps } => fixed::run(field, x_start, t0, t1, steps, false, spec),
        Method::Midpoint { steps } => fixed::run(field, x_start, t0, t1, steps, true, spec),
        Method::Dopri5 { atol, rtol } => dopri::run(field, x_start, t0, t1, atol, rtol, spec),
    }
}

pub(crate) fn check_batch<F: VelocityField + ?Sized>(field: &F, x: &Tensor) -> Result<()> {
    let expect = field.sample_shape();
    if x.rank() != expect.len() + 1 || x.shape()[1..] != expect[..] {
        let mut full = vec![x.shape().first().copied().unwrap_or(0)];
        full.extend(expect);
        return Err(Error::shape("integrate", x.shape(), &full));
    }
    Ok(())
}

pub(crate) fn assemble(shape: &[usize], rows: Vec<Vec<f64>>) -> Result<Tensor> {
    let mut s = shape.to_vec();
    s[0] = rows.len();
    Tensor::new(s, rows.into_iter().flatten().collect())
}

pub(crate) fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|a| a * a).sum::<f64>() / v.len().max(1) as f64).sqrt()
}
