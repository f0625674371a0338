use crate::error::{Error, Result};

/// Largest angle accepted between the endpoints.
const MAX_ANGLE: f64 = std::f64::consts::PI - 1e-6;

/// Spherical linear interpolation between two latent vectors.
pub fn slerp(z0: &[f64], z1: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if z0.len() != z1.len() {
        return Err(Error::shape("slerp", &[z0.len()], &[z1.len()]));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "slerp weight {lambda} outside [0, 1]"
        )));
    }
    let n0 = z0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n1 = z1.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::invalid("slerp endpoints must be nonzero"));
    }
    let cos = z0.iter().zip(z1).map(|(a, b)| a * b).sum::<f64>() / (n0 * n1);
    let omega = cos.clamp(-1.0, 1.0).acos();
    if omega >= MAX_ANGLE {
        return Err(Error::invalid(format!(
            "slerp endpoints are antipodal (angle {omega})"
        )));
    }
    if omega < 1e-12 {
        return Ok(z0
            .iter()
            .zip(z1)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect());
    }
    let s = omega.sin();
    let w0 = ((1.0 - lambda) * omega).sin() / s;
    let w1 = (lambda * omega).sin() / s;
    Ok(z0.iter().zip(z1).map(|(a, b)| w0 * a + w1 * b).collect())
}
