use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Rejects the whole step if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape("adam", params.get(id).shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    params.name(id)
                )));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((id, g), (m, v)) in params
            .ids()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.add("w", Tensor::from_vec(vec![value]));
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = single(0.3);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut ps, &[Tensor::zeros(vec![1])]).unwrap();
        }
        assert_eq!(ps.iter().next().unwrap().1.data(), &[0.3]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg);
        adam.step(&mut ps, &[Tensor::ones(vec![1])]).unwrap();
        let p = ps.iter().next().unwrap().1.data()[0];
        assert!((p - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let g = [Tensor::from_vec(vec![0.37])];
        let mut a = (single(1.0), Adam::new(AdamConfig::default()));
        let mut b = (single(1.0), Adam::new(AdamConfig::default()));
        for _ in 0..3 {
            a.1.step(&mut a.0, &g).unwrap();
            b.1.step(&mut b.0, &g).unwrap();
        }
        assert_eq!(a.0.to_named(), b.0.to_named());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = single(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam
            .step(&mut ps, &[Tensor::from_vec(vec![f64::NAN])])
            .unwrap_err();
        assert!(err.to_string().contains("parameter w"));
        assert_eq!(ps.iter().next().unwrap().1.data(), &[1.0]);
    }
}
