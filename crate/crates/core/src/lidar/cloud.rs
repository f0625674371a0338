use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl Point {
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if ![self.x, self.y, self.z].iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if !(0.0..=1.0).contains(&self.reflectance) {
            return Err(format!("reflectance {} outside [0, 1]", self.reflectance));
        }
        Ok(())
    }
}

/// Points in metres with reflectance in `[0, 1]`. Stored on disk as KITTI-style
/// little-endian `f32` quadruplets `(x, y, z, reflectance)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            p.check()
                .map_err(|m| Error::invalid(format!("point {i}: {m}")))?;
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ground-plane coordinates `(x, y)` of every point.
    pub fn xy(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|p| (p.x, p.y))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.reflectance] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(16) {
            return Err(Error::Format {
                offset: (bytes.len() - bytes.len() % 16) as u64,
                msg: format!(
                    "{} bytes is not a whole number of 16-byte points",
                    bytes.len()
                ),
            });
        }
        let mut points = Vec::with_capacity(bytes.len() / 16);
        for (i, rec) in bytes.chunks_exact(16).enumerate() {
            let f = |k: usize| {
                f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64
            };
            let p = Point {
                x: f(0),
                y: f(1),
                z: f(2),
                reflectance: f(3),
            };
            p.check().map_err(|msg| Error::Format {
                offset: (i * 16) as u64,
                msg,
            })?;
            points.push(p);
        }
        Ok(Self { points })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }
}
