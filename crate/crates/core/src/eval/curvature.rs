use std::fmt::Write;

use crate::error::{Error, Result};
use crate::nn::VelocityField;
use crate::ode::{integrate_span_each, SolverSpec};
use crate::tensor::Tensor;

/// Default number of most-curved trajectories kept for export.
pub const DEFAULT_TOP_K: usize = 200;

/// Midpoint grid `{(i + 1/2)/k}` on (0, 1).
pub fn midpoint_grid(k: usize) -> Vec<f64> {
    (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect()
}

/// One of the most curved trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvedTrajectory {
    /// Position in the input batch.
    pub index: usize,
    pub integral: f64,
    /// `(t, state)` at 0, every grid point and 1.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureProfile {
    pub times: Vec<f64>,
    /// Mean `s(t)` over successful trajectories, per grid time.
    pub mean: Vec<f64>,
    pub p95: Vec<f64>,
    /// Grid average of `s(t)` per successful trajectory.
    pub integrals: Vec<f64>,
    /// Batch index of each entry in `integrals`.
    pub indices: Vec<usize>,
    pub failed: usize,
    pub top: Vec<CurvedTrajectory>,
}

impl CurvatureProfile {
    pub fn mean_integral(&self) -> f64 {
        self.integrals.iter().sum::<f64>() / self.integrals.len().max(1) as f64
    }

    /// `t,mean,p95` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean,p95\n");
        for ((t, m), p) in self.times.iter().zip(&self.mean).zip(&self.p95) {
            let _ = writeln!(s, "{t},{m},{p}");
        }
        s
    }

    /// Per-step rows of the top trajectories: `rank,index,t,s,x0..` (or
    /// `norm` for states with more than 16 elements).
    pub fn top_csv(&self) -> String {
        let dims = self
            .top
            .first()
            .and_then(|c| c.states.first())
            .map_or(0, Vec::len);
        let listed = dims <= 16;
        let mut out = String::from("rank,index,integral,t,s");
        if listed {
            for d in 0..dims {
                let _ = write!(out, ",x{d}");
            }
        } else {
            out.push_str(",norm");
        }
        out.push('\n');
        for (rank, c) in self.top.iter().enumerate() {
            for (i, (t, st)) in c.times.iter().zip(&c.states).enumerate() {
                // s is defined on the interior grid only
                let s = if i == 0 || i + 1 == c.times.len() {
                    String::new()
                } else {
                    c.s[i - 1].to_string()
                };
                let _ = write!(out, "{rank},{},{},{t},{s}", c.index, c.integral);
                if listed {
                    for v in st {
                        let _ = write!(out, ",{v}");
                    }
                } else {
                    let n = st.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let _ = write!(out, ",{n}");
                }
                out.push('\n');
            }
        }
        out
    }
}

struct Pass {
    /// Per sample: states at 0, grid..., 1 (None on failure).
    states: Vec<Option<Vec<Vec<f64>>>>,
}

/// Integrates piecewise between consecutive knots, so every grid time is hit
/// exactly. Fixed-step solvers take their step count per segment.
fn integrate_knots<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    knots: &[f64],
    solver: &SolverSpec,
) -> Result<Pass> {
    let b = x0.shape()[0];
    let d = x0.len() / b.max(1);
    let mut states: Vec<Option<Vec<Vec<f64>>>> = (0..b)
        .map(|i| Some(vec![x0.data()[i * d..(i + 1) * d].to_vec()]))
        .collect();
    let mut spec = *solver;
    spec.record = false;
    for w in knots.windows(2) {
        let alive: Vec<usize> = (0..b).filter(|&i| states[i].is_some()).collect();
        if alive.is_empty() {
            break;
        }
        let mut shape = x0.shape().to_vec();
        shape[0] = alive.len();
        let data = alive
            .iter()
            .flat_map(|&i| {
                states[i]
                    .as_ref()
                    .expect("alive")
                    .last()
                    .expect("nonempty")
                    .clone()
            })
            .collect();
        let batch = Tensor::new(shape, data)?;
        let out = integrate_span_each(field, &batch, w[0], w[1], &spec)?;
        for (&i, o) in alive.iter().zip(out) {
            match o {
                Ok((end, _)) => states[i].as_mut().expect("alive").push(end),
                Err(e) => {
                    log::warn!("curvature: trajectory {i} excluded: {e}");
                    states[i] = None;
                }
            }
        }
    }
    Ok(Pass { states })
}

/// `s(t) = ‖(Φ(x0,1) − x0) − v(Φ(x0,t), t)‖²` on `grid ⊂ (0, 1)` for each
/// trajectory, with aggregate statistics and the `top_k` most curved paths.
pub fn curvature<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    solver: &SolverSpec,
    grid: &[f64],
    top_k: usize,
) -> Result<CurvatureProfile> {
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::invalid(
            "curvature grid must be a nonempty subset of (0, 1)",
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("curvature grid must be strictly increasing"));
    }
    if x0.rank() < 2 || x0.shape()[0] == 0 {
        return Err(Error::invalid(
            "curvature needs a nonempty batch of initial states",
        ));
    }
    let mut knots = Vec::with_capacity(grid.len() + 2);
    knots.push(0.0);
    knots.extend_from_slice(grid);
    knots.push(1.0);
    let pass = integrate_knots(field, x0, &knots, solver)?;

    let alive: Vec<usize> = (0..pass.states.len())
        .filter(|&i| pass.states[i].is_some())
        .collect();
    let failed = pass.states.len() - alive.len();
    let d = x0.len() / x0.shape()[0];
    let mut s_all = vec![vec![0.0; grid.len()]; alive.len()];
    if !alive.is_empty() {
        for (g, &t) in grid.iter().enumerate() {
            let mut shape = x0.shape().to_vec();
            shape[0] = alive.len();
            let data = alive
                .iter()
                .flat_map(|&i| pass.states[i].as_ref().expect("alive")[g + 1].clone())
                .collect();
            let v = field.velocity(&Tensor::new(shape, data)?, &vec![t; alive.len()])?;
            for (r, &i) in alive.iter().enumerate() {
                let st = pass.states[i].as_ref().expect("alive");
                let (first, last) = (&st[0], &st[st.len() - 1]);
                s_all[r][g] = (0..d)
                    .map(|k| {
                        let e = (last[k] - first[k]) - v.data()[r * d + k];
                        e * e
                    })
                    .sum();
            }
        }
    }
    let integrals: Vec<f64> = s_all
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut mean = vec![0.0; grid.len()];
    let mut p95 = vec![0.0; grid.len()];
    for g in 0..grid.len() {
        let mut col: Vec<f64> = s_all.iter().map(|s| s[g]).collect();
        mean[g] = col.iter().sum::<f64>() / col.len().max(1) as f64;
        col.sort_by(f64::total_cmp);
        p95[g] = quantile(&col, 0.95);
    }

    let mut order: Vec<usize> = (0..alive.len()).collect();
    order.sort_by(|&a, &b| integrals[b].total_cmp(&integrals[a]).then(a.cmp(&b)));
    let top = order
        .into_iter()
        .take(top_k)
        .map(|r| CurvedTrajectory {
            index: alive[r],
            integral: integrals[r],
            times: knots.clone(),
            states: pass.states[alive[r]].clone().expect("alive"),
            s: s_all[r].clone(),
        })
        .collect();

    Ok(CurvatureProfile {
        times: grid.to_vec(),
        mean,
        p95,
        integrals,
        indices: alive,
        failed,
        top,
    })
}

/// Linear-interpolated quantile of sorted values.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}
