use crate::error::{Error, Result};

/// Square bird's-eye-view grid centred on the sensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevGrid {
    /// Lower and upper bound on both x and y, metres.
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for BevGrid {
    fn default() -> Self {
        Self {
            lo: -50.0,
            hi: 50.0,
            bins: 100,
        }
    }
}

impl BevGrid {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::invalid("BEV grid needs at least one bin"));
        }
        if !(self.hi > self.lo) {
            return Err(Error::invalid(format!(
                "empty BEV extent [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Bin of one coordinate, `None` outside `[lo, hi)`.
    fn bin(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v < self.hi) {
            return None;
        }
        let i = ((v - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
        Some(i.min(self.bins - 1))
    }

    pub fn describe(&self) -> String {
        format!(
            "[{}, {}]^2 m, {}x{} bins",
            self.lo, self.hi, self.bins, self.bins
        )
    }
}

/// Normalised occupancy of a point cloud projected onto the ground plane.
/// Row index follows y, column index follows x.
#[derive(Clone, Debug, PartialEq)]
pub struct BevHistogram {
    pub grid: BevGrid,
    pub mass: Vec<f64>,
    /// False when no point fell inside the extent; `mass` is then all zero.
    pub normalized: bool,
}

impl BevHistogram {
    pub fn from_points(
        points: impl IntoIterator<Item = (f64, f64)>,
        grid: BevGrid,
    ) -> Result<Self> {
        grid.validate()?;
        let mut mass = vec![0.0; grid.bins * grid.bins];
        let mut total = 0usize;
        for (x, y) in points {
            if let (Some(c), Some(r)) = (grid.bin(x), grid.bin(y)) {
                mass[r * grid.bins + c] += 1.0;
                total += 1;
            }
        }
        if total > 0 {
            mass.iter_mut().for_each(|m| *m /= total as f64);
        }
        Ok(Self {
            grid,
            mass,
            normalized: total > 0,
        })
    }

    /// Average of normalised histograms on a shared grid.
    pub fn mean(set: &[BevHistogram]) -> Result<Self> {
        let first = set
            .first()
            .ok_or_else(|| Error::invalid("mean of an empty histogram set"))?;
        let mut mass = vec![0.0; first.mass.len()];
        let mut used = 0usize;
        for h in set {
            if h.grid != first.grid {
                return Err(Error::invalid("histograms use different grids"));
            }
            if h.normalized {
                mass.iter_mut().zip(&h.mass).for_each(|(m, v)| *m += v);
                used += 1;
            }
        }
        if used > 0 {
            mass.iter_mut().for_each(|m| *m /= used as f64);
        }
        Ok(Self {
            grid: first.grid,
            mass,
            normalized: used > 0,
        })
    }
}

fn kl_to_mix(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen–Shannon divergence in nats between two probability vectors.
pub fn jsd_mass(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd", &[p.len()], &[q.len()]));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let total: f64 = v.iter().sum();
        if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "jsd: {name} is not a probability vector (sum {total})"
            )));
        }
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let j = 0.5 * kl_to_mix(p, &m) + 0.5 * kl_to_mix(q, &m);
    Ok(j.clamp(0.0, std::f64::consts::LN_2))
}

pub fn jsd(p: &BevHistogram, q: &BevHistogram) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::invalid(format!(
            "jsd over different grids: {} vs {}",
            p.grid.describe(),
            q.grid.describe()
        )));
    }
    jsd_mass(&p.mass, &q.mass)
}
