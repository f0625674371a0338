use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::random::rng;
use crate::tensor::Tensor;

/// Exact 2-Wasserstein distance between two 1-D empirical distributions
/// with uniform weights, via their quantile functions. Sorts in place.
pub fn w2_1d(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("W2 between empty samples"));
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        return Ok((s / n as f64).sqrt());
    }
    // merge the quantile breakpoints i/n and j/m
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut s = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        s += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(s.sqrt())
}

/// Unit directions drawn as random orthonormal frames: each block of `d`
/// directions is a Gram–Schmidt-orthonormalised Gaussian matrix.
pub fn projection_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut frame: Vec<Vec<f64>> = Vec::new();
    while out.len() < count {
        if frame.len() == d {
            frame.clear();
        }
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        for f in &frame {
            let p: f64 = v.iter().zip(f).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(f).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        frame.push(v.clone());
        out.push(v);
    }
    out
}

/// Sliced 2-Wasserstein distance: mean over `projections` unit directions of
/// the 1-D W2 between the projected samples. `a: [n, ...]`, `b: [m, ...]`.
pub fn sliced_w2(a: &Tensor, b: &Tensor, projections: usize, seed: u64) -> Result<f64> {
    if a.rank() < 2 || b.rank() < 2 || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape("sliced_w2", a.shape(), b.shape()));
    }
    let (n, m) = (a.shape()[0], b.shape()[0]);
    if n == 0 || m == 0 {
        return Err(Error::invalid("sliced W2 between empty sets"));
    }
    if projections == 0 {
        return Err(Error::invalid("sliced W2 needs at least one projection"));
    }
    let d = a.len() / n;
    let dirs = projection_directions(d, projections, seed);
    let project = |x: &Tensor, rows: usize, dir: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|i| {
                x.data()[i * d..(i + 1) * d]
                    .iter()
                    .zip(dir)
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect()
    };
    let mut total = 0.0;
    for dir in &dirs {
        let mut pa = project(a, n, dir);
        let mut pb = project(b, m, dir);
        total += w2_1d(&mut pa, &mut pb)?;
    }
    Ok(total / dirs.len() as f64)
}
