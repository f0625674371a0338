use rand::seq::SliceRandom;

use super::curvature::quantile;
use crate::error::{Error, Result};
use crate::random::rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>], min: usize) -> Result<usize> {
    if a.len() < min || b.len() < min {
        return Err(Error::invalid(format!(
            "MMD needs at least {min} samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::invalid("MMD samples differ in dimension"));
    }
    Ok(d)
}

/// Median pairwise Euclidean distance over the pooled samples; 1 if all
/// samples coincide.
pub fn median_bandwidth(pooled: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = quantile(&d, 0.5);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Gaussian kernel matrix of the pooled samples `a ++ b`.
struct Pooled {
    k: Vec<f64>,
    n: usize,
    bandwidth: f64,
}

impl Pooled {
    fn new(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<Self> {
        let all: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
        let bandwidth = match bandwidth {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => {
                return Err(Error::invalid(format!(
                    "kernel bandwidth must be positive, got {s}"
                )))
            }
            None => median_bandwidth(&all),
        };
        let n = all.len();
        let mut k = vec![0.0; n * n];
        let g = 1.0 / (2.0 * bandwidth * bandwidth);
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = (-g * sq_dist(all[i], all[j])).exp();
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Ok(Self { k, n, bandwidth })
    }

    /// Unbiased MMD² for the split `labels[i] = true` for set A.
    fn unbiased(&self, in_a: &[bool]) -> f64 {
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let v = self.k[i * self.n + j];
                match (in_a[i], in_a[j]) {
                    (true, true) => saa += v,
                    (false, false) => sbb += v,
                    _ => sab += v,
                }
            }
        }
        let m = in_a.iter().filter(|x| **x).count() as f64;
        let n = self.n as f64 - m;
        // sab counted both (a, b) and (b, a)
        saa / (m * (m - 1.0)) + sbb / (n * (n - 1.0)) - sab / (m * n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdEstimate {
    pub value: f64,
    pub bandwidth: f64,
}

/// Unbiased MMD² with a Gaussian kernel; the bandwidth defaults to the
/// median pairwise distance of the pooled sample.
pub fn mmd2_unbiased(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<MmdEstimate> {
    check_sets(a, b, 2)?;
    let p = Pooled::new(a, b, bandwidth)?;
    let labels: Vec<bool> = (0..p.n).map(|i| i < a.len()).collect();
    Ok(MmdEstimate {
        value: p.unbiased(&labels),
        bandwidth: p.bandwidth,
    })
}

/// Biased (V-statistic) MMD², zero for identical sets.
pub fn mmd2_biased(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<MmdEstimate> {
    check_sets(a, b, 1)?;
    let p = Pooled::new(a, b, bandwidth)?;
    let m = a.len();
    // block sums in a fixed order so identical sets cancel exactly
    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        rows.map(|i| cols.clone().map(|j| p.k[i * p.n + j]).sum::<f64>())
            .sum::<f64>()
    };
    let saa = block(0..m, 0..m);
    let sbb = block(m..p.n, m..p.n);
    let sab = block(0..m, m..p.n);
    let (mf, nf) = (m as f64, (p.n - m) as f64);
    Ok(MmdEstimate {
        value: saa / (mf * mf) + sbb / (nf * nf) - 2.0 * sab / (mf * nf),
        bandwidth: p.bandwidth,
    })
}

/// Permutation null distribution of the unbiased MMD² statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub null_mean: f64,
    pub null_std: f64,
    /// Fraction of permutations with statistic ≥ the observed one (with the
    /// observed split counted).
    pub p_value: f64,
    pub bandwidth: f64,
}

impl PermutationTest {
    /// Observed statistic in units of the null standard deviation.
    pub fn z_score(&self) -> f64 {
        (self.statistic - self.null_mean) / self.null_std
    }
}

pub fn mmd_permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    bandwidth: Option<f64>,
    seed: u64,
) -> Result<PermutationTest> {
    check_sets(a, b, 2)?;
    if permutations < 2 {
        return Err(Error::invalid(
            "permutation test needs at least two permutations",
        ));
    }
    let p = Pooled::new(a, b, bandwidth)?;
    let mut labels: Vec<bool> = (0..p.n).map(|i| i < a.len()).collect();
    let statistic = p.unbiased(&labels);
    let mut r = rng(seed);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        labels.shuffle(&mut r);
        null.push(p.unbiased(&labels));
    }
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let var = null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64;
    let exceed = null.iter().filter(|v| **v >= statistic).count();
    Ok(PermutationTest {
        statistic,
        null_mean: mean,
        null_std: var.sqrt(),
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        bandwidth: p.bandwidth,
    })
}
