//! Bundled toy datasets.

use rand_distr::{Distribution, StandardNormal};

use crate::random::rng;
use crate::tensor::Tensor;

/// Eight isotropic Gaussians evenly spaced on a circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EightGaussians {
    pub radius: f64,
    pub std: f64,
}

impl Default for EightGaussians {
    fn default() -> Self {
        Self {
            radius: 4.0,
            std: 0.3,
        }
    }
}

impl EightGaussians {
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// `[n, 2]` samples; the mode of each sample is drawn uniformly.
    pub fn sample(&self, n: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        let centers = self.centers();
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let c = centers[rand::Rng::random_range(&mut r, 0..8)];
            let dx: f64 = StandardNormal.sample(&mut r);
            let dy: f64 = StandardNormal.sample(&mut r);
            data.push(c[0] + self.std * dx);
            data.push(c[1] + self.std * dy);
        }
        Tensor::new(vec![n, 2], data).expect("two coordinates per sample")
    }
}
