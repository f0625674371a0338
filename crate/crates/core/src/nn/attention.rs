//! Multi-head self-attention over explicit neighbour lists with rotary phases.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Init, Linear};
use super::rope::{pair_rotation, rope_phases, rotation_tables};
use super::window::{circular_window_indices, global_indices, Neighborhoods};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Token grid geometry of one attention stage: who attends to whom, and the
/// rotary tables of every token.
#[derive(Clone, Debug)]
pub struct AttentionGeometry {
    pub neighborhoods: Neighborhoods,
    head_dim: usize,
    cos: Tensor,
    sin: Tensor,
    rot: Tensor,
}

impl AttentionGeometry {
    pub fn windowed(
        row_elevations: &[f64],
        cols: usize,
        window: (usize, usize),
        head_dim: usize,
    ) -> Result<Self> {
        let nb = circular_window_indices(row_elevations.len(), cols, window)?;
        Self::with_neighborhoods(nb, row_elevations, cols, head_dim)
    }

    pub fn global(row_elevations: &[f64], cols: usize, head_dim: usize) -> Result<Self> {
        let nb = global_indices(row_elevations.len(), cols);
        Self::with_neighborhoods(nb, row_elevations, cols, head_dim)
    }

    fn with_neighborhoods(
        neighborhoods: Neighborhoods,
        row_elevations: &[f64],
        cols: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let phases = rope_phases(row_elevations, cols, head_dim)?;
        let (cos, sin) = rotation_tables(&phases);
        Ok(Self {
            neighborhoods,
            head_dim,
            cos,
            sin,
            rot: pair_rotation(head_dim),
        })
    }

    pub fn tokens(&self) -> usize {
        self.neighborhoods.tokens()
    }

    fn batched_indices(&self, batch: usize) -> Arc<[usize]> {
        let n = self.tokens();
        (0..batch)
            .flat_map(|b| self.neighborhoods.indices.iter().map(move |&i| b * n + i))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    qkv: Linear,
    out: Linear,
    width: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        width: usize,
        head_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            width.is_multiple_of(head_dim),
            "width must be a multiple of head dim"
        );
        Self {
            qkv: Linear::new(
                ps,
                &format!("{name}.qkv"),
                width,
                3 * width,
                false,
                Init::Uniform,
                rng,
            ),
            out: Linear::new(
                ps,
                &format!("{name}.out"),
                width,
                width,
                true,
                Init::Uniform,
                rng,
            ),
            width,
            head_dim,
        }
    }

    fn rotate(
        &self,
        tape: &mut Tape,
        x: Var,
        tables: (Var, Var, Var),
        batch: usize,
    ) -> Result<Var> {
        let (cos, sin, rot) = tables;
        let n = tape.shape(x)[0] / batch;
        let x3 = tape.reshape(x, &[batch, n, self.head_dim])?;
        let xc = tape.mul(x3, cos)?;
        let xr = tape.matmul(x3, rot)?;
        let xs = tape.mul(xr, sin)?;
        let y = tape.add(xc, xs)?;
        tape.reshape(y, &[batch * n, self.head_dim])
    }

    /// `x: [B, N, C]` → `[B, N, C]`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        geom: &AttentionGeometry,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let n = geom.tokens();
        if shape.len() != 3
            || shape[1] != n
            || shape[2] != self.width
            || geom.head_dim != self.head_dim
        {
            return Err(Error::shape("attention", &shape, &[0, n, self.width]));
        }
        let b = shape[0];
        let d = self.head_dim;
        let heads = self.width / d;

        let flat = tape.reshape(x, &[b * n, self.width])?;
        let qkv = self.qkv.apply(tape, vars, flat)?;
        let tables = (
            tape.constant(geom.cos.clone()),
            tape.constant(geom.sin.clone()),
            tape.constant(geom.rot.clone()),
        );
        let nb = geom.batched_indices(b);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = tape.slice(qkv, 1, h * d, d)?;
            let kk = tape.slice(qkv, 1, self.width + h * d, d)?;
            let v = tape.slice(qkv, 1, 2 * self.width + h * d, d)?;
            let q = self.rotate(tape, q, tables, b)?;
            let kk = self.rotate(tape, kk, tables, b)?;

            let scores = tape.neighbor_dot(q, kk, Arc::clone(&nb))?;
            let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
            let attn = tape.softmax(scores, 1)?;
            outs.push(tape.neighbor_mix(attn, v, Arc::clone(&nb))?);
        }
        let cat = tape.concat(&outs, 1)?;
        let y = self.out.apply(tape, vars, cat)?;
        tape.reshape(y, &[b, n, self.width])
    }
}

/// Stand-alone attention layer with its own parameters.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    params: ParamStore,
    attn: Attention,
}

impl AttentionLayer {
    pub fn new(width: usize, head_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let attn = Attention::new(&mut params, "attn", width, head_dim, &mut rng);
        Self { params, attn }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `x: [B, N, C]` tokens in row-major grid order.
    pub fn apply(&self, x: &Tensor, geom: &AttentionGeometry) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let vars = self.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.attn.apply(&mut tape, &vars, xv, geom)?;
        let out = tape.value(y).clone();
        if !out.all_finite() {
            return Err(Error::NonFinite("attention output".into()));
        }
        Ok(out)
    }
}

/// Blends skipped and current tokens: `w ⊙ skip + (1 − w) ⊙ current`, `w`
/// broadcast over the trailing (channel) axis.
pub fn skip_fusion(tape: &mut Tape, current: Var, skip: Var, weight: Var) -> Result<Var> {
    if tape.shape(current) != tape.shape(skip) {
        return Err(Error::shape(
            "skip_fusion",
            tape.shape(current),
            tape.shape(skip),
        ));
    }
    let from_skip = tape.mul(skip, weight)?;
    let neg = tape.neg(weight);
    let keep = tape.add_scalar(neg, 1.0);
    let from_current = tape.mul(current, keep)?;
    tape.add(from_skip, from_current)
}

/// Value-level [`skip_fusion`].
pub fn skip_fusion_values(current: &Tensor, skip: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let c = tape.constant(current.clone());
    let s = tape.constant(skip.clone());
    let w = tape.constant(weight.clone());
    let out = skip_fusion(&mut tape, c, s, w)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn geometry(rows: usize, cols: usize, head_dim: usize) -> AttentionGeometry {
        let elev: Vec<f64> = (0..rows).map(|r| 0.05 - 0.03 * r as f64).collect();
        AttentionGeometry::windowed(&elev, cols, (3, 9), head_dim).unwrap()
    }

    fn random_tokens(b: usize, rows: usize, cols: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![b, rows * cols, c], |_| rng.random_range(-1.0..1.0))
    }

    /// Shifts columns of a `[B, rows·cols, C]` token grid right by `s`.
    fn shift_cols(x: &Tensor, rows: usize, cols: usize, s: usize) -> Tensor {
        let (b, c) = (x.shape()[0], x.shape()[2]);
        let mut out = x.clone();
        for bi in 0..b {
            for r in 0..rows {
                for col in 0..cols {
                    let src = ((bi * rows + r) * cols + col) * c;
                    let dst = ((bi * rows + r) * cols + (col + s) % cols) * c;
                    out.data_mut()[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
                }
            }
        }
        out
    }

    #[test]
    fn identical_tokens_give_identical_outputs() {
        let layer = AttentionLayer::new(8, 8, 1);
        let geom = geometry(4, 12, 8);
        let tok: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let x = Tensor::from_fn(vec![1, 48, 8], |i| tok[i % 8]);
        let y = layer.apply(&x, &geom).unwrap();
        // rotary phases differ per token but the values are shared, so the
        // softmax-weighted average of identical values is the same everywhere
        for t in 1..48 {
            for c in 0..8 {
                assert!((y.data()[t * 8 + c] - y.data()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_equivariance_single_column() {
        let (rows, cols) = (4, 16);
        let layer = AttentionLayer::new(16, 8, 2);
        let geom = geometry(rows, cols, 8);
        let x = random_tokens(2, rows, cols, 16, 5);
        let y = layer.apply(&x, &geom).unwrap();
        let ys = layer.apply(&shift_cols(&x, rows, cols, 1), &geom).unwrap();
        let dev = shift_cols(&y, rows, cols, 1).max_abs_diff(&ys).unwrap();
        assert!(dev <= 1e-5, "deviation {dev}");
    }

    #[test]
    fn tokens_outside_window_do_not_matter() {
        let (rows, cols) = (6, 20);
        let layer = AttentionLayer::new(8, 8, 3);
        let geom = geometry(rows, cols, 8);
        let x = random_tokens(1, rows, cols, 8, 9);
        let focal = 2 * cols + 3;
        let far = 5 * cols + 13;
        assert!(!geom.neighborhoods.of(2, 3).contains(&far));
        let mut x2 = x.clone();
        for c in 0..8 {
            x2.data_mut()[far * 8 + c] += 10.0;
        }
        let y = layer.apply(&x, &geom).unwrap();
        let y2 = layer.apply(&x2, &geom).unwrap();
        assert_eq!(
            &y.data()[focal * 8..focal * 8 + 8],
            &y2.data()[focal * 8..focal * 8 + 8]
        );
    }

    #[test]
    fn skip_fusion_blends() {
        let cur = Tensor::full(vec![1, 3, 2], 2.0);
        let skip = Tensor::full(vec![1, 3, 2], 4.0);
        let half = skip_fusion_values(&cur, &skip, &Tensor::full(vec![2], 0.5)).unwrap();
        assert!(half.data().iter().all(|&v| v == 3.0));
        let one = skip_fusion_values(&cur, &skip, &Tensor::ones(vec![2])).unwrap();
        assert_eq!(one, skip);
        let zero = skip_fusion_values(&cur, &skip, &Tensor::zeros(vec![2])).unwrap();
        assert_eq!(zero, cur);
        assert!(
            skip_fusion_values(&cur, &Tensor::zeros(vec![1, 2, 2]), &Tensor::ones(vec![2]))
                .is_err()
        );
    }
}
