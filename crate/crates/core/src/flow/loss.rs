use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Pseudo-Huber scale `c = 0.00054·√d` for `d` elements per sample.
pub fn pseudo_huber_c(d: usize) -> f64 {
    0.00054 * (d as f64).sqrt()
}

/// `x_t = t·x1 + (1 − t)·x0`.
pub fn interpolate_state(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("interpolate_state", x0.shape(), x1.shape()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "interpolation time {t} outside [0, 1]"
        )));
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| t * b + (1.0 - t) * a)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Per-sample `x_t` for a batch with one time per sample.
pub fn interpolate_batch(x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("interpolate_batch", x0.shape(), x1.shape()));
    }
    let b = x0.shape().first().copied().unwrap_or(0);
    if t.len() != b {
        return Err(Error::invalid(format!(
            "{} times for a batch of {b}",
            t.len()
        )));
    }
    let width = x0.len().checked_div(b).unwrap_or(0);
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .enumerate()
        .map(|(i, (a, c))| {
            let ti = t[i / width];
            ti * c + (1.0 - ti) * a
        })
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Squared residual norms `‖(x1 − x0) − v‖²`, one per sample.
fn residual_norms(v_pred: &Tensor, x0: &Tensor, x1: &Tensor) -> Result<Vec<f64>> {
    for other in [x0, x1] {
        if other.shape() != v_pred.shape() {
            return Err(Error::shape("flow loss", v_pred.shape(), other.shape()));
        }
    }
    let b = v_pred.shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::invalid("flow loss over an empty batch"));
    }
    let width = v_pred.len() / b;
    let mut out = vec![0.0; b];
    for (i, ((v, a), c)) in v_pred
        .data()
        .iter()
        .zip(x0.data())
        .zip(x1.data())
        .enumerate()
    {
        let r = (c - a) - v;
        out[i / width] += r * r;
    }
    Ok(out)
}

/// Conditional flow-matching loss, averaged over the batch.
pub fn cfm_loss(v_pred: &Tensor, x0: &Tensor, x1: &Tensor) -> Result<f64> {
    let n = residual_norms(v_pred, x0, x1)?;
    Ok(n.iter().sum::<f64>() / n.len() as f64)
}

/// `sqrt(‖r‖² + c²) − c` averaged over the batch, `c = 0.00054·√d`.
pub fn pseudo_huber_loss(v_pred: &Tensor, x0: &Tensor, x1: &Tensor, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("pseudo-Huber loss needs d > 0"));
    }
    let c = pseudo_huber_c(d);
    let n = residual_norms(v_pred, x0, x1)?;
    Ok(n.iter().map(|r2| (r2 + c * c).sqrt() - c).sum::<f64>() / n.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Squared error.
    Cfm,
    PseudoHuber,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cfm => "cfm",
            LossKind::PseudoHuber => "pseudo-huber",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cfm" | "l2" => Some(LossKind::Cfm),
            "pseudo-huber" | "huber" => Some(LossKind::PseudoHuber),
            _ => None,
        }
    }

    /// Differentiable batch loss of prediction `v` (`[B, ...]`) against
    /// constant `target`.
    pub fn apply(self, tape: &mut Tape, v: Var, target: &Tensor) -> Result<Var> {
        let shape = tape.shape(v).to_vec();
        if shape != target.shape() {
            return Err(Error::shape("loss", &shape, target.shape()));
        }
        let b = shape[0];
        let d = target.len() / b.max(1);
        let tgt = tape.constant(target.clone());
        let r = tape.sub(v, tgt)?;
        let sq = tape.square(r);
        match self {
            LossKind::Cfm => {
                let s = tape.sum(sq);
                Ok(tape.scale(s, 1.0 / b as f64))
            }
            LossKind::PseudoHuber => {
                let c = pseudo_huber_c(d);
                let flat = tape.reshape(sq, &[b, d])?;
                let n2 = tape.sum_axis(flat, 1)?;
                let shifted = tape.add_scalar(n2, c * c);
                let root = tape.sqrt(shifted)?;
                let l = tape.add_scalar(root, -c);
                Ok(tape.mean(l))
            }
        }
    }
}
