//! Reverse-mode automatic differentiation over a linear record of primitive ops.
//!
//! Every primitive appends one node whose inputs were appended before it, so
//! the record is topologically ordered by construction and backward is a
//! single reverse sweep.

use std::sync::Arc;

use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op maps onto the left operand's shape.
#[derive(Clone, Debug)]
enum Bcast {
    Same,
    Scalar,
    /// Right operand equals the trailing axes of the left operand.
    Suffix(usize),
    General(Arc<[usize]>),
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Bcast::Same);
        }
        if b.len() > a.len() {
            return Err(Error::shape(op, a, b));
        }
        let off = a.len() - b.len();
        for (i, &eb) in b.iter().enumerate() {
            if eb != a[off + i] && eb != 1 {
                return Err(Error::shape(op, a, b));
            }
        }
        if numel(b) == 1 {
            return Ok(Bcast::Scalar);
        }
        if b == &a[off..] {
            return Ok(Bcast::Suffix(numel(b)));
        }
        // strides of b laid over a's axes, zero where b is broadcast
        let mut strides = vec![0usize; a.len()];
        let mut s = 1;
        for i in (0..b.len()).rev() {
            if b[i] != 1 {
                strides[off + i] = s;
            }
            s *= b[i];
        }
        let n = numel(a);
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; a.len()];
        for _ in 0..n {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for ax in (0..a.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < a[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Bcast::General(map.into()))
    }

    #[inline]
    fn for_each(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Bcast::Same => (0..n).for_each(|i| f(i, i)),
            Bcast::Scalar => (0..n).for_each(|i| f(i, 0)),
            Bcast::Suffix(m) => (0..n).for_each(|i| f(i, i % m)),
            Bcast::General(map) => (0..n).for_each(|i| f(i, map[i])),
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    MeanAxis(Var, usize),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Tanh(Var),
    Square(Var),
    Softmax(Var, usize),
    Gather(Var, Arc<[usize]>),
    NeighborDot(Var, Var, Arc<[usize]>),
    NeighborMix(Var, Var, Arc<[usize]>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Computation record. Values are computed eagerly as ops are appended.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// (outer, extent, inner) decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// `c = a·b (+ beta·c)` for row-major `a: m×k`, `b: k×n` given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller guarantees that the strided views of `a`, `b` and `c`
    // lie within their slices; dimensions were validated when the op was built.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that evaluates values but never records gradient information.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            tracked: tracked && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is requested.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.var_shared(Arc::new(t))
    }

    pub fn var_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(t),
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn t(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bc = Bcast::resolve(name, va.shape(), vb.shape())?;
        let (da, db) = (va.data(), vb.data());
        let mut out = vec![0.0; da.len()];
        bc.for_each(da.len(), |i, j| out[i] = f(da[i], db[j]));
        let value = Tensor {
            shape: va.shape().to_vec(),
            data: out,
        };
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(value, mk(a, b, bc), tracked))
    }

    /// Elementwise `a + b`, `b` broadcast over trailing axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let tracked = self.t(a);
        self.push(value, op, tracked)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                msg: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    /// `a[..., K] · b[K, N] -> [..., N]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = va.len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            va.data(),
            (k as isize, 1),
            vb.data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if numel(shape) != va.len() {
            return Err(Error::shape("reshape", va.shape(), shape));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: va.data().to_vec(),
        };
        let tracked = self.t(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::invalid("concat of zero inputs"));
        };
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", &s0, s));
            }
            total += s[axis];
        }
        let mut shape = s0.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let tracked = inputs.iter().any(|&v| self.t(v));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Concat(inputs.to_vec(), axis),
            tracked,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) on axis {axis} of shape {s:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = split_axis(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let tracked = self.t(a);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Slice {
                input: a,
                axis,
                start,
            },
            tracked,
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let tracked = self.t(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len().max(1) as f64;
        let tracked = self.t(a);
        self.push(Tensor::scalar(m), Op::Mean(a), tracked)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if axis >= va.rank() {
            return Err(Error::invalid(format!(
                "reduce axis {axis} on shape {:?}",
                va.shape()
            )));
        }
        let (outer, ext, inner) = split_axis(va.shape(), axis);
        let d = va.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..ext {
                let row = &d[(o * ext + j) * inner..(o * ext + j + 1) * inner];
                for (acc, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
        if mean {
            let s = 1.0 / ext as f64;
            out.iter_mut().for_each(|v| *v *= s);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = 1;
        let op = if mean {
            Op::MeanAxis(a, axis)
        } else {
            Op::SumAxis(a, axis)
        };
        let tracked = self.t(a);
        Ok(self.push(Tensor { shape, data: out }, op, tracked))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if axis >= va.rank() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} on shape {:?}",
                va.shape()
            )));
        }
        let (outer, ext, inner) = split_axis(va.shape(), axis);
        let d = va.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * ext + j) * inner + i;
                let max = (0..ext).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..ext {
                    let e = (d[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..ext {
                    out[at(j)] /= z;
                }
            }
        }
        let value = Tensor {
            shape: va.shape().to_vec(),
            data: out,
        };
        let tracked = self.t(a);
        Ok(self.push(value, Op::Softmax(a, axis), tracked))
    }

    /// Selects rows along axis 0: `out[i] = a[indices[i]]`.
    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.is_empty() {
            return Err(Error::invalid("gather on rank-0 tensor"));
        }
        let rows = s[0];
        let width = numel(&s[1..]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let d = va.data();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices.iter() {
            out.extend_from_slice(&d[i * width..(i + 1) * width]);
        }
        let mut shape = s.to_vec();
        shape[0] = indices.len();
        let tracked = self.t(a);
        Ok(self.push(Tensor { shape, data: out }, Op::Gather(a, indices), tracked))
    }

    /// Checks `a: [R, A]`, `b: [M, D]` and `R·K` neighbour rows of `b`; returns `(R, K, D)`.
    fn neighbor_dims(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        idx: &[usize],
    ) -> Result<(usize, usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(name, sa, sb));
        }
        let rows = sa[0];
        let per = if rows == 0 { 0 } else { idx.len() / rows };
        if rows * per != idx.len() {
            return Err(Error::invalid(format!(
                "{name}: {} neighbour indices for {rows} rows",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= sb[0]) {
            return Err(Error::invalid(format!(
                "{name}: index {bad} out of range for {} rows",
                sb[0]
            )));
        }
        Ok((rows, per, sb[1]))
    }

    /// Scores against neighbour rows: `out[r, j] = q[r] · k[idx[r·K + j]]` for
    /// `q: [R, D]`, `k: [M, D]`, `K = idx.len() / R`.
    pub fn neighbor_dot(&mut self, q: Var, k: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (rows, per, d) = self.neighbor_dims("neighbor_dot", q, k, &idx)?;
        if self.shape(q)[1] != d {
            return Err(Error::shape("neighbor_dot", self.shape(q), self.shape(k)));
        }
        let (vq, vk) = (self.nodes[q.0].value.data(), self.nodes[k.0].value.data());
        let out: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(e, &i)| {
                let r = e / per.max(1);
                vq[r * d..(r + 1) * d]
                    .iter()
                    .zip(&vk[i * d..(i + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let tracked = self.t(q) || self.t(k);
        let value = Tensor {
            shape: vec![rows, per],
            data: out,
        };
        Ok(self.push(value, Op::NeighborDot(q, k, idx), tracked))
    }

    /// Weighted neighbour sums: `out[r] = Σ_j w[r, j] · v[idx[r·K + j]]` for
    /// `w: [R, K]`, `v: [M, D]`.
    pub fn neighbor_mix(&mut self, w: Var, v: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (rows, per, d) = self.neighbor_dims("neighbor_mix", w, v, &idx)?;
        if self.shape(w)[1] != per {
            return Err(Error::shape("neighbor_mix", self.shape(w), &[rows, per]));
        }
        let (vw, vv) = (self.nodes[w.0].value.data(), self.nodes[v.0].value.data());
        let mut out = vec![0.0; rows * d];
        for (e, &i) in idx.iter().enumerate() {
            let r = e / per;
            let we = vw[e];
            out[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&vv[i * d..(i + 1) * d])
                .for_each(|(o, x)| *o += we * x);
        }
        let tracked = self.t(w) || self.t(v);
        let value = Tensor {
            shape: vec![rows, d],
            data: out,
        };
        Ok(self.push(value, Op::NeighborMix(w, v, idx), tracked))
    }

    /// Back-propagates from a single-element objective.
    pub fn backward(&self, objective: Var) -> Result<Gradients> {
        let root = &self.nodes[objective.0];
        if root.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar objective, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; objective.0 + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[objective.0] = Some(vec![1.0]);

        for idx in (0..=objective.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if let Op::Leaf = node.op {
                leaves[idx] = Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g,
                });
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { leaves, shapes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    bc.for_each(g.len(), |i, j| gb[j] += g[i]);
                }
            }
            Op::Sub(a, b, bc) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    bc.for_each(g.len(), |i, j| gb[j] -= g[i]);
                }
            }
            Op::Mul(a, b, bc) => {
                let (da, db) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    bc.for_each(g.len(), |i, j| ga[i] += g[i] * db[j]);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    bc.for_each(g.len(), |i, j| gb[j] += g[i] * da[i]);
                }
            }
            Op::Div(a, b, bc) => {
                let (da, db) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    bc.for_each(g.len(), |i, j| ga[i] += g[i] / db[j]);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    bc.for_each(g.len(), |i, j| gb[j] -= g[i] * da[i] / (db[j] * db[j]));
                }
            }
            Op::Neg(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::MatMul(a, b) => {
                let sb = self.nodes[b.0].value.shape();
                let (k, n) = (sb[0], sb[1]);
                let m = g.len() / n.max(1);
                let (da, db) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    // dA[m,k] += dC[m,n] · Bᵀ
                    gemm(m, n, k, g, (n as isize, 1), db, (1, n as isize), ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // dB[k,n] += Aᵀ · dC
                    gemm(k, m, n, da, (1, k as isize), g, (n as isize, 1), gb, 1.0);
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for o in 0..outer {
                    for &v in inputs {
                        let chunk = self.nodes[v.0].value.shape()[*axis] * inner;
                        if let Some(gv) = self.acc(grads, v) {
                            gv[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(&g[offset..offset + chunk])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += chunk;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.nodes[input.0].value.shape();
                let (outer, ext, inner) = split_axis(s, *axis);
                let len = node.value.shape()[*axis];
                if let Some(gi) = self.acc(grads, *input) {
                    for o in 0..outer {
                        let base = (o * ext + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gi[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let s = g[0] / ga.len().max(1) as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, ext, inner) = split_axis(self.nodes[a.0].value.shape(), *axis);
                let s = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / ext as f64
                } else {
                    1.0
                };
                if let Some(ga) = self.acc(grads, *a) {
                    for o in 0..outer {
                        for j in 0..ext {
                            let dst = &mut ga[(o * ext + j) * inner..(o * ext + j + 1) * inner];
                            let src = &g[o * inner..(o + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += s * y);
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i];
                    }
                }
            }
            Op::Log(a) => {
                let da = val(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] / da[i];
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += 0.5 * g[i] / out[i];
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Square(a) => {
                let da = val(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += 2.0 * g[i] * da[i];
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let (outer, ext, inner) = split_axis(node.value.shape(), *axis);
                if let Some(ga) = self.acc(grads, *a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * ext + j) * inner + i;
                            let dot: f64 = (0..ext).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..ext {
                                ga[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Gather(a, indices) => {
                let s = self.nodes[a.0].value.shape();
                let width = numel(&s[1..]);
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, &i) in indices.iter().enumerate() {
                        let src = &g[r * width..(r + 1) * width];
                        ga[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::NeighborDot(q, k, idx) => {
                let d = self.nodes[q.0].value.shape()[1];
                let per = node.value.shape()[1];
                let (vq, vk) = (val(*q), val(*k));
                if let Some(gq) = self.acc(grads, *q) {
                    for (e, &i) in idx.iter().enumerate() {
                        let r = e / per;
                        gq[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&vk[i * d..(i + 1) * d])
                            .for_each(|(a, b)| *a += g[e] * b);
                    }
                }
                if let Some(gk) = self.acc(grads, *k) {
                    for (e, &i) in idx.iter().enumerate() {
                        let r = e / per;
                        gk[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&vq[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += g[e] * b);
                    }
                }
            }
            Op::NeighborMix(w, v, idx) => {
                let d = node.value.shape()[1];
                let per = self.nodes[w.0].value.shape()[1];
                let (vw, vv) = (val(*w), val(*v));
                if let Some(gw) = self.acc(grads, *w) {
                    for (e, &i) in idx.iter().enumerate() {
                        let r = e / per;
                        gw[e] += g[r * d..(r + 1) * d]
                            .iter()
                            .zip(&vv[i * d..(i + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                if let Some(gv) = self.acc(grads, *v) {
                    for (e, &i) in idx.iter().enumerate() {
                        let r = e / per;
                        gv[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += vw[e] * b);
                    }
                }
            }
        }
    }
}

/// Gradients of a scalar objective with respect to tracked leaves.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf reached by the objective, if any.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf; exactly zero when the objective does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.leaves.get_mut(v.0).and_then(Option::take)
    }
}
