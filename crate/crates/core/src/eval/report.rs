use std::fmt::Write;

use rand::Rng as _;

use crate::random::rng;

/// One row of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    /// Value multiplied by the conventional reporting factor.
    pub scaled: f64,
    pub config_digest: String,
}

/// Reporting factors: JSD ×10², MMD ×10⁴, everything else ×1.
pub fn report_scale(metric: &str) -> f64 {
    if metric.starts_with("jsd") {
        1e2
    } else if metric.starts_with("mmd") {
        1e4
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, value: f64, config_digest: &str) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            value,
            scaled: value * report_scale(metric),
            config_digest: config_digest.to_string(),
        });
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,scaled,config_digest\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{}",
                r.metric, r.value, r.scaled, r.config_digest
            );
        }
        s
    }
}

/// Bootstrap standard error of `stat` over `n` resampled indices.
pub fn bootstrap_se(
    n: usize,
    reps: usize,
    seed: u64,
    mut stat: impl FnMut(&[usize]) -> f64,
) -> f64 {
    if n == 0 || reps < 2 {
        return f64::NAN;
    }
    let mut r = rng(seed);
    let mut idx = vec![0usize; n];
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = r.random_range(0..n));
            stat(&idx)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
}
