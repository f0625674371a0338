use super::{integrate, Direction, Integration, Method, SolverSpec, Trajectory};
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::nn::VelocityField;
use crate::random::{rng, standard_normal};
use crate::tensor::Tensor;

/// Generated batch with the latents it came from.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub x0: Tensor,
    pub samples: Tensor,
    /// Velocity evaluations per sample.
    pub nfe: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
}

/// Draws `n` standard-normal latents from `seed` and integrates them forward.
/// Distilled stages only accept their own k-step Euler schedule.
pub fn sample(flow: &Flow, n: usize, spec: &SolverSpec, seed: u64) -> Result<SampleBatch> {
    check_sampler(flow, spec)?;
    let x0 = standard_normal(n, &flow.model.sample_shape(), &mut rng(seed));
    sample_from(flow, x0, spec)
}

/// Integrates the given latents `x0: [n, ...]` forward.
pub fn sample_from(flow: &Flow, x0: Tensor, spec: &SolverSpec) -> Result<SampleBatch> {
    check_sampler(flow, spec)?;
    if x0.shape().first() == Some(&0) {
        return Ok(SampleBatch {
            samples: x0.clone(),
            x0,
            nfe: Vec::new(),
            trajectories: Vec::new(),
        });
    }
    let Integration { end, trajectories } = integrate(&flow.model, &x0, spec)?;
    Ok(SampleBatch {
        x0,
        samples: end,
        nfe: trajectories.iter().map(|t| t.nfe).collect(),
        trajectories,
    })
}

fn check_sampler(flow: &Flow, spec: &SolverSpec) -> Result<()> {
    if spec.direction != Direction::Forward {
        return Err(Error::invalid("sampling integrates forward from t = 0"));
    }
    if let Some(k) = flow.stage.tag.fixed_steps() {
        if spec.method != (Method::Euler { steps: k }) {
            return Err(Error::Stage(format!(
                "{} model was trained only at t in {{0, 1/{k}, ..}} and must be sampled with {k}-step Euler, got {}",
                flow.stage.tag,
                spec.describe()
            )));
        }
    }
    spec.validate()
}

/// Maps data to latents by integrating from t = 1 back to t = 0.
pub fn invert<F: VelocityField + ?Sized>(
    field: &F,
    x1: &Tensor,
    spec: &SolverSpec,
) -> Result<Integration> {
    if spec.direction != Direction::Reverse {
        return Err(Error::invalid("inversion needs a reverse-direction solver"));
    }
    integrate(field, x1, spec)
}
