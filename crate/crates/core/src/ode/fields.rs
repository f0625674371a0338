//! Analytic velocity fields for testing solvers and pipelines.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::nn::VelocityField;
use crate::tensor::Tensor;

fn check(shape: &[usize], x: &Tensor, t: &[f64]) -> Result<usize> {
    if x.rank() != shape.len() + 1 || x.shape()[1..] != *shape {
        let mut want = vec![x.shape().first().copied().unwrap_or(0)];
        want.extend_from_slice(shape);
        return Err(Error::shape("field", x.shape(), &want));
    }
    if t.len() != x.shape()[0] {
        return Err(Error::invalid(format!(
            "{} times for a batch of {}",
            t.len(),
            x.shape()[0]
        )));
    }
    Ok(x.shape()[0])
}

/// `v(x, t) = c`.
#[derive(Clone, Debug)]
pub struct ConstantField {
    pub value: Tensor,
}

impl ConstantField {
    pub fn new(value: Tensor) -> Self {
        Self { value }
    }
}

impl VelocityField for ConstantField {
    fn sample_shape(&self) -> Vec<usize> {
        self.value.shape().to_vec()
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let b = check(self.value.shape(), x, t)?;
        let data = self
            .value
            .data()
            .iter()
            .copied()
            .cycle()
            .take(b * self.value.len())
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// `v(x, t) = rate · x`.
#[derive(Clone, Copy, Debug)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl LinearField {
    pub fn new(dim: usize, rate: f64) -> Self {
        Self { dim, rate }
    }
}

impl VelocityField for LinearField {
    fn sample_shape(&self) -> Vec<usize> {
        vec![self.dim]
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        check(&[self.dim], x, t)?;
        Ok(x.map(|a| self.rate * a))
    }
}

/// Field given by a per-sample closure `f(x_row, t) -> v_row`.
pub struct FnField<F> {
    shape: Vec<usize>,
    f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> FnField<F> {
    pub fn new(shape: Vec<usize>, f: F) -> Self {
        Self { shape, f }
    }
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> VelocityField for FnField<F> {
    fn sample_shape(&self) -> Vec<usize> {
        self.shape.clone()
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let b = check(&self.shape, x, t)?;
        let width = x.len().checked_div(b).unwrap_or(0);
        let mut out = Vec::with_capacity(x.len());
        for (i, &ti) in t.iter().enumerate() {
            let v = (self.f)(&x.data()[i * width..(i + 1) * width], ti);
            if v.len() != width {
                return Err(Error::invalid(format!(
                    "closure returned {} values, expected {width}",
                    v.len()
                )));
            }
            out.extend(v);
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Wraps a field and counts per-sample velocity evaluations and batched calls.
pub struct CountingField<F> {
    inner: F,
    evaluations: Cell<usize>,
    calls: Cell<usize>,
}

impl<F: VelocityField> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            evaluations: Cell::new(0),
            calls: Cell::new(0),
        }
    }

    /// Sum of batch sizes over all calls.
    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.evaluations.set(0);
        self.calls.set(0);
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    fn sample_shape(&self) -> Vec<usize> {
        self.inner.sample_shape()
    }

    fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        self.calls.set(self.calls.get() + 1);
        self.evaluations.set(self.evaluations.get() + t.len());
        self.inner.velocity(x, t)
    }
}
