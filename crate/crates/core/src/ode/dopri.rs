//! Dormand–Prince 5(4) with FSAL and per-sample step-size control. Samples
//! keep their own time and step size but share batched field evaluations.

use super::fixed::rows_tensor;
use super::{SampleOutcome, SolverSpec, Trajectory, MIN_STEP};
use crate::error::{Error, Result};
use crate::nn::VelocityField;
use crate::tensor::Tensor;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 10.0;
const MIN_SHRINK: f64 = 0.2;

struct Sample {
    t: f64,
    h: f64,
    x: Vec<f64>,
    k1: Vec<f64>,
    traj: Trajectory,
    failure: Option<Error>,
    done: bool,
}

fn scaled_rms(err: &[f64], x0: &[f64], x1: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    (err.iter()
        .zip(x0.iter().zip(x1))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Evaluates the field on rows `idx` of `xs` at times `ts`.
fn eval<F: VelocityField + ?Sized>(
    field: &F,
    shape: &[usize],
    xs: &[Vec<f64>],
    ts: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..xs.len()).collect();
    let batch = rows_tensor(shape, xs, &idx);
    let v = field.velocity(&batch, ts)?;
    Ok(v.unstack().into_iter().map(Tensor::into_data).collect())
}

pub(crate) fn run<F: VelocityField + ?Sized>(
    field: &F,
    x: &Tensor,
    t0: f64,
    t1: f64,
    atol: f64,
    rtol: f64,
    spec: &SolverSpec,
) -> Result<Vec<SampleOutcome>> {
    let shape = x.shape();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut samples: Vec<Sample> = x
        .unstack()
        .into_iter()
        .map(|s| {
            let x = s.into_data();
            Sample {
                t: t0,
                h: 0.0,
                traj: Trajectory {
                    times: if spec.record { vec![t0] } else { Vec::new() },
                    states: if spec.record {
                        vec![x.clone()]
                    } else {
                        Vec::new()
                    },
                    nfe: 0,
                    solver: spec.describe(),
                },
                x,
                k1: Vec::new(),
                failure: None,
                done: false,
            }
        })
        .collect();
    if samples.is_empty() {
        return Ok(Vec::new());
    }

    // initial derivative and step size (Hairer, Nørsett & Wanner, II.4)
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let f0 = eval(field, shape, &xs, &vec![t0; xs.len()])?;
    let mut probe_x = Vec::with_capacity(xs.len());
    let mut h0s = Vec::with_capacity(xs.len());
    for (s, f) in samples.iter_mut().zip(f0) {
        s.traj.nfe += 1;
        let zero = vec![0.0; s.x.len()];
        let d0 = scaled_rms(&s.x, &zero, &s.x, atol, rtol);
        let d1 = scaled_rms(&f, &zero, &s.x, atol, rtol);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        probe_x.push(s.x.iter().zip(&f).map(|(a, d)| a + dir * h0 * d).collect());
        h0s.push(h0);
        s.k1 = f;
    }
    let probe_t: Vec<f64> = h0s.iter().map(|h| t0 + dir * h).collect();
    let f1 = eval(field, shape, &probe_x, &probe_t)?;
    for ((s, f), h0) in samples.iter_mut().zip(f1).zip(h0s) {
        s.traj.nfe += 1;
        let diff: Vec<f64> = f.iter().zip(&s.k1).map(|(a, b)| a - b).collect();
        let zero = vec![0.0; s.x.len()];
        let d1 = scaled_rms(&s.k1, &zero, &s.x, atol, rtol);
        let d2 = scaled_rms(&diff, &zero, &s.x, atol, rtol) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        s.h = (100.0 * h0).min(h1).min(span);
        if !s.k1.iter().all(|v| v.is_finite()) {
            s.failure = Some(Error::Solver {
                t: t0,
                reason: "non-finite velocity".into(),
                last_state: s.x.clone(),
            });
        }
    }

    loop {
        let active: Vec<usize> = (0..samples.len())
            .filter(|&i| !samples[i].done && samples[i].failure.is_none())
            .collect();
        if active.is_empty() {
            break;
        }
        // clamp the step to land exactly on t1
        let hs: Vec<f64> = active
            .iter()
            .map(|&i| {
                let s = &samples[i];
                s.h.min((t1 - s.t).abs())
            })
            .collect();

        let mut ks: Vec<Vec<Vec<f64>>> = active
            .iter()
            .map(|&i| vec![samples[i].k1.clone()])
            .collect();
        let mut x5: Vec<Vec<f64>> = Vec::new();
        for stage in 1..7 {
            let xs: Vec<Vec<f64>> = active
                .iter()
                .enumerate()
                .map(|(r, &i)| {
                    let s = &samples[i];
                    let h = dir * hs[r];
                    let mut y = s.x.clone();
                    for (j, k) in ks[r].iter().enumerate() {
                        let a = A[stage][j];
                        if a != 0.0 {
                            y.iter_mut().zip(k).for_each(|(yy, kk)| *yy += h * a * kk);
                        }
                    }
                    y
                })
                .collect();
            let ts: Vec<f64> = active
                .iter()
                .enumerate()
                .map(|(r, &i)| samples[i].t + dir * C[stage] * hs[r])
                .collect();
            let fs = eval(field, shape, &xs, &ts)?;
            for (r, f) in fs.into_iter().enumerate() {
                ks[r].push(f);
            }
            if stage == 6 {
                x5 = xs;
            }
        }

        for (r, &i) in active.iter().enumerate() {
            let s = &mut samples[i];
            s.traj.nfe += 6;
            let h = hs[r];
            let k = &ks[r];
            if k.iter().any(|kk| kk.iter().any(|v| !v.is_finite())) {
                s.failure = Some(Error::Solver {
                    t: s.t,
                    reason: "non-finite velocity".into(),
                    last_state: s.x.clone(),
                });
                continue;
            }
            let err: Vec<f64> = (0..s.x.len())
                .map(|d| dir * h * (0..7).map(|j| E[j] * k[j][d]).sum::<f64>())
                .collect();
            let en = scaled_rms(&err, &s.x, &x5[r], atol, rtol);
            let factor = if en == 0.0 {
                MAX_GROWTH
            } else {
                (SAFETY * en.powf(-1.0 / 5.0)).clamp(MIN_SHRINK, MAX_GROWTH)
            };
            if en <= 1.0 {
                let reached = (t1 - s.t).abs() <= h;
                s.t = if reached { t1 } else { s.t + dir * h };
                s.x = x5[r].clone();
                s.k1 = k[6].clone();
                if spec.record {
                    s.traj.times.push(s.t);
                    s.traj.states.push(s.x.clone());
                }
                s.done = reached;
                s.h = h * factor;
            } else {
                s.h = h * factor.min(1.0);
            }
            if !s.done && s.h < MIN_STEP {
                s.failure = Some(Error::Solver {
                    t: s.t,
                    reason: format!("step size underflow ({:e})", s.h),
                    last_state: s.x.clone(),
                });
            }
        }
    }

    Ok(samples
        .into_iter()
        .map(|s| match s.failure {
            Some(e) => Err(e),
            None => Ok((s.x, s.traj)),
        })
        .collect())
}

/// Fixed-step Dormand–Prince (fifth-order solution, no error control).
/// Used to measure the convergence order of the tableau.
pub fn rk45_fixed<F: VelocityField + ?Sized>(
    field: &F,
    x: &Tensor,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("rk45_fixed needs at least one step"));
    }
    let b = x.shape()[0];
    let h = (t1 - t0) / steps as f64;
    let mut cur = x.clone();
    for n in 0..steps {
        let t = t0 + h * n as f64;
        let mut ks: Vec<Tensor> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut y = cur.clone();
            for (j, k) in ks.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    y.data_mut()
                        .iter_mut()
                        .zip(k.data())
                        .for_each(|(yy, kk)| *yy += h * a * kk);
                }
            }
            if stage == 6 {
                cur = y;
                break;
            }
            ks.push(field.velocity(&y, &vec![t + C[stage] * h; b])?);
        }
    }
    Ok(cur)
}
