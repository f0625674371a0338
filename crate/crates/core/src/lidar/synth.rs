//! Procedural mini-LiDAR scenes: a ground plane and random boxes, ray-cast at
//! the pixel centres of a small range image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::beam::{column_center_azimuth, BeamTable};
use super::codec::LogCodec;
use super::image::RangeImage;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub reflectance: f64,
}

impl SceneBox {
    /// Entry distance of the ray `origin + s·dir`, if it hits.
    fn hit(&self, dir: [f64; 3]) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if dir[k].abs() < 1e-12 {
                if 0.0 < self.min[k] || 0.0 > self.max[k] {
                    return None;
                }
                continue;
            }
            let a = self.min[k] / dir[k];
            let b = self.max[k] / dir[k];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        (lo <= hi && lo > 0.0).then_some(lo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub beams: BeamTable,
    pub width: usize,
    pub x_max: f64,
    /// Height of the ground plane below the sensor, in metres.
    pub ground: f64,
    pub max_boxes: usize,
    /// Probability that a return is dropped at random.
    pub dropout: f64,
}

impl SceneConfig {
    /// 16 beams from +3° to −25° over 128 columns.
    pub fn mini() -> Self {
        Self {
            beams: BeamTable::uniform(16, 3.0, -25.0).expect("valid beam table"),
            width: 128,
            x_max: super::codec::DEFAULT_X_MAX,
            ground: 1.7,
            max_boxes: 6,
            dropout: 0.02,
        }
    }
}

/// Random scene; box positions, sizes and reflectances come from `seed`.
pub fn scene_boxes(cfg: &SceneConfig, seed: u64) -> Vec<SceneBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=cfg.max_boxes.max(1));
    (0..n)
        .map(|_| {
            let dist = rng.random_range(4.0..30.0);
            let phi: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (cx, cy) = (dist * phi.cos(), dist * phi.sin());
            let sx = rng.random_range(0.8..4.0);
            let sy = rng.random_range(0.8..4.0);
            let h = rng.random_range(1.0..3.5);
            SceneBox {
                min: [cx - sx / 2.0, cy - sy / 2.0, -cfg.ground],
                max: [cx + sx / 2.0, cy + sy / 2.0, -cfg.ground + h],
                reflectance: rng.random_range(0.2..0.9),
            }
        })
        .collect()
}

/// Renders one scene into a range image.
pub fn render(cfg: &SceneConfig, seed: u64, codec: &LogCodec) -> Result<RangeImage> {
    let boxes = scene_boxes(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut img = RangeImage::empty(cfg.beams.clone(), cfg.width, cfg.x_max)?;
    for row in 0..cfg.beams.rows() {
        let theta = cfg.beams.elevation(row);
        for col in 0..cfg.width {
            let phi = column_center_azimuth(col as f64, cfg.width);
            let dir = [
                theta.cos() * phi.cos(),
                theta.cos() * phi.sin(),
                theta.sin(),
            ];
            let mut best: Option<(f64, f64)> = None;
            if dir[2] < 0.0 {
                best = Some((cfg.ground / -dir[2], 0.1));
            }
            for b in &boxes {
                if let Some(s) = b.hit(dir) {
                    if best.is_none_or(|(r, _)| s < r) {
                        best = Some((s, b.reflectance));
                    }
                }
            }
            let dropped = rng.random::<f64>() < cfg.dropout;
            if let Some((r, refl)) = best {
                if r <= cfg.x_max && !dropped {
                    img.set(row, col, r, refl, codec);
                }
            }
        }
    }
    Ok(img)
}

/// `[n, 2, H, W]` model-space batch of scenes `seed, seed + 1, ...`.
pub fn scene_batch(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Tensor> {
    let codec = LogCodec::new(cfg.x_max);
    let (h, w) = (cfg.beams.rows(), cfg.width);
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for i in 0..n {
        let img = render(cfg, seed.wrapping_add(i as u64), &codec)?;
        data.extend_from_slice(img.to_model_space().data());
    }
    Tensor::new(vec![n, 2, h, w], data)
}
