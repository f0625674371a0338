use crate::tensor::Tensor;

/// Sinusoidal features of the flow time at geometric frequencies.
///
/// `dim/2` frequencies run geometrically from 1 to `base`; the first half of
/// the output holds sines and the second half cosines. Times outside `[0, 1]`
/// are accepted (adaptive solvers may probe slightly past the end point).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub base: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self {
            dim: 16,
            base: 100.0,
        }
    }
}

impl TimeEmbedding {
    pub fn new(dim: usize, base: f64) -> Self {
        assert!(
            dim >= 2 && dim.is_multiple_of(2),
            "time embedding dim must be even"
        );
        Self { dim, base }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dim / 2;
        (0..half)
            .map(|i| {
                if half == 1 {
                    1.0
                } else {
                    self.base.powf(i as f64 / (half - 1) as f64)
                }
            })
            .collect()
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let freqs = self.frequencies();
        let mut out = Vec::with_capacity(self.dim);
        out.extend(freqs.iter().map(|w| (w * t).sin()));
        out.extend(freqs.iter().map(|w| (w * t).cos()));
        out
    }

    /// `[B, dim]` embedding of a batch of times.
    pub fn embed_batch(&self, ts: &[f64]) -> Tensor {
        let data = ts.iter().flat_map(|&t| self.embed(t)).collect();
        Tensor::new(vec![ts.len(), self.dim], data).expect("shape matches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time() {
        let e = TimeEmbedding::default().embed(0.0);
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn injective_on_grid() {
        let emb = TimeEmbedding::default();
        let grid: Vec<Vec<f64>> = (0..256).map(|i| emb.embed(i as f64 / 255.0)).collect();
        let mut min = f64::INFINITY;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                let d: f64 = grid[i]
                    .iter()
                    .zip(&grid[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                min = min.min(d);
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn bounded_and_deterministic() {
        let emb = TimeEmbedding::new(32, 1000.0);
        let a = emb.embed(0.3712);
        assert_eq!(a, emb.embed(0.3712));
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
