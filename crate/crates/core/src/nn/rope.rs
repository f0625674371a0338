//! Rotary phases tied to the sensor geometry.
//!
//! Half of the rotation pairs of a head carry the token azimuth at harmonics
//! `1, 2, 4, …`, so the relative encoding is exactly periodic over one
//! revolution. The other half carry the beam elevation at the same harmonics.

use crate::error::{Error, Result};
use crate::lidar::beam::column_center_azimuth;
use crate::tensor::Tensor;

/// `1, 2, 4, …` (`count` terms).
pub fn harmonics(count: usize) -> Vec<f64> {
    (0..count).map(|j| (1u64 << j.min(62)) as f64).collect()
}

/// Per-token rotation angles, `[rows·cols, head_dim/2]`.
///
/// `row_elevations` gives the elevation (radians) of each token row.
pub fn rope_phases(row_elevations: &[f64], cols: usize, head_dim: usize) -> Result<Tensor> {
    if head_dim == 0 || !head_dim.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "head dim {head_dim} must be a positive multiple of 4"
        )));
    }
    let pairs = head_dim / 2;
    let per_axis = pairs / 2;
    let k = harmonics(per_axis);
    let rows = row_elevations.len();
    let mut data = Vec::with_capacity(rows * cols * pairs);
    for &elev in row_elevations {
        for c in 0..cols {
            let az = column_center_azimuth(c as f64, cols);
            data.extend(k.iter().map(|h| h * az));
            data.extend(k.iter().map(|h| h * elev));
        }
    }
    Tensor::new(vec![rows * cols, pairs], data)
}

/// Expands pair angles to `(cos, sin)` tables of shape `[N, head_dim]`.
pub(crate) fn rotation_tables(phases: &Tensor) -> (Tensor, Tensor) {
    let n = phases.shape()[0];
    let pairs = phases.shape()[1];
    let mut cos = Vec::with_capacity(n * pairs * 2);
    let mut sin = Vec::with_capacity(n * pairs * 2);
    for &a in phases.data() {
        let (s, c) = a.sin_cos();
        cos.extend([c, c]);
        sin.extend([s, s]);
    }
    (
        Tensor::new(vec![n, pairs * 2], cos).expect("shape"),
        Tensor::new(vec![n, pairs * 2], sin).expect("shape"),
    )
}

/// `D×D` matrix `P` with `(q·P)[2j] = −q[2j+1]`, `(q·P)[2j+1] = q[2j]`.
pub(crate) fn pair_rotation(head_dim: usize) -> Tensor {
    let mut p = Tensor::zeros(vec![head_dim, head_dim]);
    let d = p.data_mut();
    for j in 0..head_dim / 2 {
        d[(2 * j + 1) * head_dim + 2 * j] = -1.0;
        d[2 * j * head_dim + 2 * j + 1] = 1.0;
    }
    p
}
