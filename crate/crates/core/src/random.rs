//! Seeded random streams. Every stochastic routine takes an explicit seed or rng.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `[n, ...shape]` tensor of standard normal draws.
pub fn standard_normal(n: usize, shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut full = vec![n];
    full.extend_from_slice(shape);
    Tensor::from_fn(full, |_| StandardNormal.sample(rng))
}
