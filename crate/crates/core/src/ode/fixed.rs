use super::{rms, SampleOutcome, SolverSpec, Trajectory};
use crate::error::{Error, Result};
use crate::nn::VelocityField;
use crate::tensor::Tensor;

/// One explicit Euler step for a batch: `x + (t_next − t) · v(x, t)`.
pub fn euler_step<F: VelocityField + ?Sized>(
    field: &F,
    x: &Tensor,
    t: f64,
    t_next: f64,
) -> Result<Tensor> {
    if t == t_next {
        return Err(Error::invalid("euler step with zero length"));
    }
    let b = x.shape().first().copied().unwrap_or(0);
    let v = field.velocity(x, &vec![t; b])?;
    if v.shape() != x.shape() {
        return Err(Error::shape("euler_step", x.shape(), v.shape()));
    }
    if !v.all_finite() {
        return Err(Error::Solver {
            t,
            reason: format!("non-finite velocity (state norm {})", x.norm()),
            last_state: x.data().to_vec(),
        });
    }
    let h = t_next - t;
    let data = x
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| a + h * b)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn rows_tensor(shape: &[usize], states: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let mut s = shape.to_vec();
    s[0] = idx.len();
    let data = idx
        .iter()
        .flat_map(|&i| states[i].iter().copied())
        .collect();
    Tensor::new(s, data).expect("rows share the sample shape")
}

pub(crate) fn run<F: VelocityField + ?Sized>(
    field: &F,
    x: &Tensor,
    t0: f64,
    t1: f64,
    steps: usize,
    midpoint: bool,
    spec: &SolverSpec,
) -> Result<Vec<SampleOutcome>> {
    let b = x.shape()[0];
    let mut states: Vec<Vec<f64>> = x.unstack().into_iter().map(Tensor::into_data).collect();
    let mut trajs: Vec<Trajectory> = (0..b)
        .map(|i| Trajectory {
            times: if spec.record { vec![t0] } else { Vec::new() },
            states: if spec.record {
                vec![states[i].clone()]
            } else {
                Vec::new()
            },
            nfe: 0,
            solver: spec.describe(),
        })
        .collect();
    let mut failed: Vec<Option<Error>> = (0..b).map(|_| None).collect();
    let mut active: Vec<usize> = (0..b).collect();
    let time = |n: usize| t0 + (t1 - t0) * n as f64 / steps as f64;

    for n in 0..steps {
        if active.is_empty() {
            break;
        }
        let (ta, tb) = (time(n), time(n + 1));
        let h = tb - ta;
        let xa = rows_tensor(x.shape(), &states, &active);
        let ts = vec![ta; active.len()];
        let mut v = field.velocity(&xa, &ts)?;
        for &i in &active {
            trajs[i].nfe += 1;
        }
        if midpoint {
            let half: Vec<f64> = xa
                .data()
                .iter()
                .zip(v.data())
                .map(|(a, d)| a + 0.5 * h * d)
                .collect();
            let xm = Tensor::new(xa.shape().to_vec(), half)?;
            v = field.velocity(&xm, &vec![ta + 0.5 * h; active.len()])?;
            for &i in &active {
                trajs[i].nfe += 1;
            }
        }
        let width = v.len() / active.len().max(1);
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let vel = &v.data()[r * width..(r + 1) * width];
            if vel.iter().any(|a| !a.is_finite()) {
                failed[i] = Some(Error::Solver {
                    t: ta,
                    reason: format!("non-finite velocity (state rms {})", rms(&states[i])),
                    last_state: states[i].clone(),
                });
                continue;
            }
            for (s, d) in states[i].iter_mut().zip(vel) {
                *s += h * d;
            }
            if spec.record {
                trajs[i].times.push(tb);
                trajs[i].states.push(states[i].clone());
            }
            still.push(i);
        }
        active = still;
    }

    Ok(states
        .into_iter()
        .zip(trajs)
        .zip(failed)
        .map(|((s, t), f)| match f {
            Some(e) => Err(e),
            None => Ok((s, t)),
        })
        .collect())
}
