use log::{debug, info};
use rand::Rng as _;

use super::loss::{interpolate_batch, LossKind};
use super::pairs::{PairDataset, PairKind};
use super::stage::{step_grid, Flow, FlowStage, ParentRef, StageTag};
use super::time::{sample_timestep, TimeDist};
use crate::binio::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::{VelocityField, VelocityModel};
use crate::random::{rng, standard_normal, Rng};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub time: TimeDist,
    pub loss: LossKind,
    /// The learning rate decays linearly to `lr · lr_floor` over training.
    pub lr_floor: f64,
    pub log_every: usize,
}

impl TrainConfig {
    /// Defaults for initial flow matching: uniform t, squared error.
    pub fn one_rf() -> Self {
        Self {
            steps: 20_000,
            batch: 256,
            adam: AdamConfig::default(),
            seed: 0,
            time: TimeDist::Uniform,
            loss: LossKind::Cfm,
            lr_floor: 1.0,
            log_every: 1000,
        }
    }

    /// Defaults for reflow and distillation: U-shaped t, pseudo-Huber loss.
    pub fn reflow() -> Self {
        Self {
            time: TimeDist::u_shaped(),
            loss: LossKind::PseudoHuber,
            ..Self::one_rf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::Config(format!(
                "lr floor {} outside [0, 1]",
                self.lr_floor
            )));
        }
        self.time.validate()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("time", self.time.name()),
            ("loss", self.loss.name().to_string()),
            ("lr_floor", self.lr_floor.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// SHA-256 over the canonical `key=value` lines.
    pub fn digest(&self) -> String {
        let text: String = self
            .to_pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.adam.lr;
        }
        let frac = step as f64 / (self.steps - 1) as f64;
        self.adam.lr * (1.0 - frac * (1.0 - self.lr_floor))
    }
}

/// Per-step training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean loss over consecutive windows of `window` steps.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

/// One regression batch: inputs `x_t`, times and velocity targets.
struct Batch {
    xt: Tensor,
    t: Vec<f64>,
    target: Tensor,
}

fn fit(
    model: &mut VelocityModel,
    cfg: &TrainConfig,
    label: &str,
    mut draw: impl FnMut(&mut Rng) -> Result<Batch>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut r = rng(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut log = TrainLog {
        losses: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let b = draw(&mut r)?;
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let x = tape.constant(b.xt);
        let v = model.forward(&mut tape, &vars, x, &b.t)?;
        let loss = cfg.loss.apply(&mut tape, v, &b.target)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{label} loss at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let g = model.params().collect_grads(&grads, &vars);
        adam.config.lr = cfg.lr_at(step);
        adam.step(model.params_mut(), &g).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at {label} step {step}")),
            other => other,
        })?;
        log.losses.push(value);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let w = cfg.log_every.min(log.losses.len());
            let recent = log.losses[log.losses.len() - w..].iter().sum::<f64>() / w as f64;
            info!("{label} step {}/{}: loss {recent:.6}", step + 1, cfg.steps);
        }
    }
    debug!("{label} finished after {} steps", cfg.steps);
    Ok(log)
}

fn gather(data: &Tensor, idx: &[usize]) -> Tensor {
    let n = data.shape()[0];
    let d = data.len() / n.max(1);
    let mut shape = data.shape().to_vec();
    shape[0] = idx.len();
    let rows = idx
        .iter()
        .flat_map(|&i| data.data()[i * d..(i + 1) * d].iter().copied())
        .collect();
    Tensor::new(shape, rows).expect("gathered rows keep the row shape")
}

fn draw_indices(r: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| r.random_range(0..n)).collect()
}

/// Initial flow matching on independent (x0 ~ N(0, I), x1 ~ data) pairs.
pub fn train_1rf(
    model: VelocityModel,
    data: &Tensor,
    cfg: &TrainConfig,
) -> Result<(Flow, TrainLog)> {
    let shape = model.sample_shape();
    if data.rank() != shape.len() + 1 || data.shape()[1..] != shape[..] {
        let mut want = vec![data.shape().first().copied().unwrap_or(0)];
        want.extend_from_slice(&shape);
        return Err(Error::shape("train_1rf data", data.shape(), &want));
    }
    let n = data.shape()[0];
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    let mut model = model;
    let log = fit(&mut model, cfg, "1-RF", |r| {
        let idx = draw_indices(r, n, cfg.batch);
        let x1 = gather(data, &idx);
        let x0 = standard_normal(cfg.batch, &shape, r);
        let t: Vec<f64> = (0..cfg.batch)
            .map(|_| sample_timestep(&cfg.time, r))
            .collect();
        let xt = interpolate_batch(&x0, &x1, &t)?;
        let target = sub(&x1, &x0);
        Ok(Batch { xt, t, target })
    })?;
    let stage = FlowStage::new(StageTag::OneRf, None, cfg.digest())?;
    Ok((Flow { model, stage }, log))
}

fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("operands share a shape")
}

fn check_pairs(pairs: &PairDataset, parent: &Flow, parent_digest: &str, what: &str) -> Result<()> {
    if pairs.kind != PairKind::OdeCoupled {
        return Err(Error::Stage(format!(
            "{what} needs ode-coupled pairs; {} pairs would only retrain 1-RF",
            pairs.kind.name()
        )));
    }
    if pairs.parent_digest != parent_digest {
        return Err(Error::Stage(format!(
            "pairs were generated by checkpoint {} but the parent is {}",
            pairs.parent_digest, parent_digest
        )));
    }
    if pairs.sample_shape != parent.model.sample_shape() {
        return Err(Error::shape(
            "pairs",
            &pairs.sample_shape,
            &parent.model.sample_shape(),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("pair dataset is empty"));
    }
    Ok(())
}

/// Reflow: retrains a copy of `parent` on its own ODE-coupled pairs.
pub fn train_reflow(
    parent: &Flow,
    parent_digest: &str,
    pairs: &PairDataset,
    cfg: &TrainConfig,
) -> Result<(Flow, TrainLog)> {
    let stage = FlowStage::new(
        StageTag::TwoRf,
        Some(ParentRef {
            tag: parent.stage.tag,
            digest: parent_digest.to_string(),
        }),
        cfg.digest(),
    )?;
    check_pairs(pairs, parent, parent_digest, "reflow")?;
    let mut model = parent.model.clone();
    let n = pairs.len();
    let log = fit(&mut model, cfg, "2-RF", |r| {
        let idx = draw_indices(r, n, cfg.batch);
        let x0 = pairs.waypoint_rows(&idx, 0);
        let x1 = pairs.waypoint_rows(&idx, pairs.grid);
        let t: Vec<f64> = (0..cfg.batch)
            .map(|_| sample_timestep(&cfg.time, r))
            .collect();
        let xt = interpolate_batch(&x0, &x1, &t)?;
        let target = sub(&x1, &x0);
        Ok(Batch { xt, t, target })
    })?;
    Ok((Flow { model, stage }, log))
}

/// k-step timestep distillation. Training inputs are the parent trajectory
/// states at `j/k`; targets are the scaled segment increments
/// `k·(Φ(x0, (j+1)/k) − Φ(x0, j/k))`, so k Euler steps of the student
/// replay the parent trajectory.
pub fn distill(
    parent: &Flow,
    parent_digest: &str,
    k: usize,
    pairs: &PairDataset,
    cfg: &TrainConfig,
) -> Result<(Flow, TrainLog)> {
    if k == 0 {
        return Err(Error::invalid("distillation needs k >= 1"));
    }
    let stage = FlowStage::new(
        StageTag::Distilled { k },
        Some(ParentRef {
            tag: parent.stage.tag,
            digest: parent_digest.to_string(),
        }),
        cfg.digest(),
    )?;
    check_pairs(pairs, parent, parent_digest, "distillation")?;
    if !pairs.grid.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "pairs store waypoints on a grid of {}, which does not contain the {k}-step grid",
            pairs.grid
        )));
    }
    let stride = pairs.grid / k;
    let grid = step_grid(k);
    let n = pairs.len();
    let mut model = parent.model.clone();
    let log = fit(&mut model, cfg, &format!("{k}-TD"), |r| {
        let idx = draw_indices(r, n, cfg.batch);
        let seg: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..k)).collect();
        let mut xt = Vec::with_capacity(cfg.batch);
        let mut target = Vec::with_capacity(cfg.batch);
        for (&i, &j) in idx.iter().zip(&seg) {
            let a = pairs.waypoint_rows(&[i], j * stride);
            let b = pairs.waypoint_rows(&[i], (j + 1) * stride);
            target.push(sub(&b, &a).map(|v| v * k as f64));
            xt.push(a);
        }
        let t = seg.iter().map(|&j| grid[j]).collect();
        Ok(Batch {
            xt: concat_rows(&xt)?,
            t,
            target: concat_rows(&target)?,
        })
    })?;
    Ok((Flow { model, stage }, log))
}

fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    Tensor::new(
        shape,
        parts
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect(),
    )
}
