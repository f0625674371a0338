//! Two-channel equirectangular range images.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic     8 bytes "RFLWRIMG"
//! height    u32
//! width     u32
//! channels  u32     2 (log-range, reflectance)
//! x_max     f32
//! data      f32 × channels × height × width, channel-major, rows top first
//! mask      ceil(height × width / 8) bytes, bit i (LSB first) set = raydrop
//! ```

use std::fs;
use std::path::Path;

use super::beam::{azimuth_column, column_center_azimuth, BeamTable};
use super::cloud::{Point, PointCloud};
use super::codec::LogCodec;
use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RFLWRIMG";
const CHANNELS: u32 = 2;

/// Model-space value of a raydrop pixel.
pub const RAYDROP: f64 = -1.0;
/// Model-space codes below `−1 + RAYDROP_EPS` are read back as raydrop.
pub const RAYDROP_EPS: f64 = 2.0 / 255.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    beams: BeamTable,
    width: usize,
    x_max: f64,
    /// Encoded range in `[0, 1]`, row-major `H × W`.
    pub log_range: Vec<f64>,
    pub reflectance: Vec<f64>,
    /// `true` where the pixel has no return.
    pub mask: Vec<bool>,
}

impl RangeImage {
    /// Fully masked image.
    pub fn empty(beams: BeamTable, width: usize, x_max: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("range image width must be positive"));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::invalid(format!(
                "x_max must be positive, got {x_max}"
            )));
        }
        let n = beams.rows() * width;
        Ok(Self {
            beams,
            width,
            x_max,
            log_range: vec![0.0; n],
            reflectance: vec![0.0; n],
            mask: vec![true; n],
        })
    }

    pub fn height(&self) -> usize {
        self.beams.rows()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn beams(&self) -> &BeamTable {
        &self.beams
    }

    pub fn valid_pixels(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// Sets pixel `(row, col)` to a return at range `range` (metres).
    pub fn set(&mut self, row: usize, col: usize, range: f64, reflectance: f64, codec: &LogCodec) {
        let i = row * self.width + col;
        self.log_range[i] = codec.encode(range);
        self.reflectance[i] = reflectance.clamp(0.0, 1.0);
        self.mask[i] = false;
    }

    /// Decoded range of pixel `i` in metres, `None` for raydrop.
    pub fn range_at(&self, i: usize, codec: &LogCodec) -> Option<f64> {
        (!self.mask[i]).then(|| codec.decode(self.log_range[i]))
    }

    /// Spherical projection. Column from azimuth, row from the nearest beam
    /// elevation; on collisions the nearest return wins. Points at the origin
    /// carry no direction and are ignored.
    pub fn project(
        cloud: &PointCloud,
        beams: &BeamTable,
        width: usize,
        codec: &LogCodec,
    ) -> Result<Self> {
        let mut img = Self::empty(beams.clone(), width, codec.x_max())?;
        let mut best = vec![f64::INFINITY; img.log_range.len()];
        for p in cloud.points() {
            let r = p.range();
            if r == 0.0 {
                continue;
            }
            let phi = p.y.atan2(p.x);
            let theta = p.z.atan2(p.x.hypot(p.y));
            let row = beams.nearest_row(theta);
            let col = azimuth_column(phi, width);
            let i = row * width + col;
            if r < best[i] {
                best[i] = r;
                img.set(row, col, r, p.reflectance, codec);
            }
        }
        Ok(img)
    }

    /// One point per valid pixel along the beam elevation and column-centre
    /// azimuth, at the decoded range.
    pub fn unproject(&self, codec: &LogCodec) -> PointCloud {
        let mut points = Vec::with_capacity(self.valid_pixels());
        for row in 0..self.height() {
            let theta = self.beams.elevation(row);
            for col in 0..self.width {
                let i = row * self.width + col;
                if let Some(r) = self.range_at(i, codec) {
                    let phi = column_center_azimuth(col as f64, self.width);
                    points.push(Point {
                        x: r * theta.cos() * phi.cos(),
                        y: r * theta.cos() * phi.sin(),
                        z: r * theta.sin(),
                        reflectance: self.reflectance[i],
                    });
                }
            }
        }
        PointCloud::new(points).expect("decoded points are finite with valid reflectance")
    }

    /// `[2, H, W]` tensor with `m = 2u − 1` per channel and raydrop at −1.
    pub fn to_model_space(&self) -> Tensor {
        let n = self.log_range.len();
        let mut data = vec![RAYDROP; 2 * n];
        for i in 0..n {
            if !self.mask[i] {
                data[i] = 2.0 * self.log_range[i] - 1.0;
                data[n + i] = 2.0 * self.reflectance[i] - 1.0;
            }
        }
        Tensor::new(vec![2, self.height(), self.width], data).expect("two channels")
    }

    /// Inverse of [`RangeImage::to_model_space`]. A pixel is raydrop when its
    /// range code lies below `−1 + ε`; other values are clamped to `[−1, 1]`.
    pub fn from_model_space(m: &Tensor, beams: &BeamTable, x_max: f64) -> Result<Self> {
        let (h, w) = (beams.rows(), m.shape().get(2).copied().unwrap_or(0));
        if m.shape() != [2, h, w] {
            return Err(Error::shape("from_model_space", m.shape(), &[2, h, w]));
        }
        let mut img = Self::empty(beams.clone(), w, x_max)?;
        let n = h * w;
        for i in 0..n {
            let r = m.data()[i];
            if r < RAYDROP + RAYDROP_EPS {
                continue;
            }
            img.mask[i] = false;
            img.log_range[i] = (r.clamp(-1.0, 1.0) + 1.0) / 2.0;
            img.reflectance[i] = (m.data()[n + i].clamp(-1.0, 1.0) + 1.0) / 2.0;
        }
        Ok(img)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.log_range.len();
        let mut out = Vec::with_capacity(28 + 8 * n + n.div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.height() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&CHANNELS.to_le_bytes());
        out.extend_from_slice(&(self.x_max as f32).to_le_bytes());
        for ch in [&self.log_range, &self.reflectance] {
            for v in ch.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, m) in self.mask.iter().enumerate() {
            if *m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    /// Parses an image file; the beam table is not stored and must match the
    /// recorded height.
    pub fn from_bytes(bytes: &[u8], beams: &BeamTable) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let h = r.u32()? as usize;
        if h != beams.rows() {
            return Err(Error::Format {
                offset: 8,
                msg: format!("image has {h} rows but the beam table has {}", beams.rows()),
            });
        }
        let w = r.u32()? as usize;
        if w == 0 {
            return Err(Error::Format {
                offset: 12,
                msg: "zero width".into(),
            });
        }
        let ch = r.u32()?;
        if ch != CHANNELS {
            return Err(Error::Format {
                offset: 16,
                msg: format!("expected {CHANNELS} channels, found {ch}"),
            });
        }
        let x_max = r.f32()? as f64;
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::Format {
                offset: 20,
                msg: format!("invalid x_max {x_max}"),
            });
        }
        let n = h * w;
        let expected = 24 + 8 * n + n.div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: 24,
                msg: format!(
                    "payload size {} does not match {h}x{w} image ({expected} bytes)",
                    bytes.len()
                ),
            });
        }
        let mut img = Self::empty(beams.clone(), w, x_max)?;
        for i in 0..n {
            img.log_range[i] = r.f32()? as f64;
        }
        for i in 0..n {
            img.reflectance[i] = r.f32()? as f64;
        }
        let bits = r.bytes(n.div_ceil(8))?;
        for i in 0..n {
            img.mask[i] = bits[i / 8] >> (i % 8) & 1 == 1;
        }
        Ok(img)
    }

    pub fn load(path: &Path, beams: &BeamTable) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, beams)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }
}
