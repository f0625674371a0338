use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-row elevation angles of a spinning LiDAR, top row first.
///
/// Azimuth uses `W` uniform bins over one revolution: column `j` spans
/// `φ ∈ (π − 2π(j+1)/W, π − 2πj/W]`, so column 0 starts at `φ = π` and
/// columns advance clockwise (decreasing `φ = atan2(y, x)`).
#[derive(Clone, Debug, PartialEq)]
pub struct BeamTable {
    elevations: Vec<f64>,
}

impl BeamTable {
    /// Elevations in radians; must be finite and strictly decreasing.
    pub fn new(elevations: Vec<f64>) -> Result<Self> {
        if elevations.is_empty() {
            return Err(Error::invalid("beam table is empty"));
        }
        if elevations.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("beam table has a non-finite angle"));
        }
        if let Some(w) = elevations.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "beam elevations must strictly decrease (rows {w} and {})",
                w + 1
            )));
        }
        Ok(Self { elevations })
    }

    /// `rows` evenly spaced elevations from `top_deg` down to `bottom_deg`.
    pub fn uniform(rows: usize, top_deg: f64, bottom_deg: f64) -> Result<Self> {
        if rows == 1 {
            return Self::new(vec![top_deg.to_radians()]);
        }
        let step = (bottom_deg - top_deg) / (rows - 1) as f64;
        Self::new(
            (0..rows)
                .map(|i| (top_deg + step * i as f64).to_radians())
                .collect(),
        )
    }

    /// 64 beams from +3° to −25°.
    pub fn default_64() -> Self {
        Self::uniform(64, 3.0, -25.0).expect("static table is valid")
    }

    pub fn rows(&self) -> usize {
        self.elevations.len()
    }

    pub fn elevation(&self, row: usize) -> f64 {
        self.elevations[row]
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Row whose elevation is closest to `elevation` (radians).
    pub fn nearest_row(&self, elevation: f64) -> usize {
        // decreasing table: first index with angle below the query
        let idx = self.elevations.partition_point(|&e| e > elevation);
        match idx {
            0 => 0,
            i if i == self.elevations.len() => i - 1,
            i => {
                if self.elevations[i - 1] - elevation <= elevation - self.elevations[i] {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// One angle in degrees per line, top row first. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let deg: f64 = line.parse().map_err(|_| {
                Error::Config(format!(
                    "beam table line {}: bad angle {line:?}",
                    lineno + 1
                ))
            })?;
            out.push(deg.to_radians());
        }
        Self::new(out)
    }

    pub fn to_text(&self) -> String {
        self.elevations
            .iter()
            .map(|e| format!("{}\n", e.to_degrees()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

/// Azimuth of the centre of column `col` in a `width`-column image.
pub fn column_center_azimuth(col: f64, width: usize) -> f64 {
    PI - 2.0 * PI * (col + 0.5) / width as f64
}

/// Column containing azimuth `phi`, always in `[0, width)`.
pub fn azimuth_column(phi: f64, width: usize) -> usize {
    let u = (PI - phi) / (2.0 * PI) * width as f64;
    (u.floor() as i64).rem_euclid(width as i64) as usize
}
