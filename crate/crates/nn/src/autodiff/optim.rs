use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{shape_err, NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.epsilon > 0.0 && unit(self.beta1) && unit(self.beta2)) {
            return Err(NnError::Config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { config, step_count: 0, first_moment: zeros(), second_moment: zeros() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter in `params` with matching `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return shape_err("adam", format!("{} parameters, {} gradients", params.len(), grads.len()));
        }
        for ((_, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return shape_err("adam", format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()));
            }
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Constant `initial_lr` before `decay_start`, then a linear ramp reaching 0
/// at `total_epochs`.
pub fn lr_linear_decay(initial_lr: f64, epoch: usize, total_epochs: usize, decay_start: usize) -> f64 {
    if epoch < decay_start {
        return initial_lr;
    }
    if epoch >= total_epochs {
        return 0.0;
    }
    initial_lr * (total_epochs - epoch) as f64 / (total_epochs - decay_start) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("x", Tensor::new(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut params = ParamStore::default();
        params.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut state = AdamState::new(cfg, &params);
        let g = Tensor::new(vec![3], vec![0.3, -4.0, 1e-3]).unwrap();
        state.step(&mut params, std::slice::from_ref(&g)).unwrap();
        let start = [1.0, -2.0, 0.5];
        for i in 0..3 {
            let gv = g.data()[i];
            let expected = start[i] - cfg.lr * gv / (gv.abs() + cfg.epsilon);
            let got = params.get("w").unwrap().data()[i];
            assert!((got - expected).abs() <= 1e-15 * expected.abs(), "{got} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = scalar_store(0.7);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        state.step(&mut params, &[Tensor::zeros(&[1])]).unwrap();
        assert_eq!(params.get("x").unwrap().data()[0], 0.7);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn two_constant_gradient_steps_follow_the_recurrence() {
        let cfg = AdamConfig { lr: 1e-5, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 };
        let mut params = scalar_store(1.0);
        let mut state = AdamState::new(cfg, &params);
        let g = 2.0;
        for _ in 0..2 {
            state.step(&mut params, &[Tensor::new(vec![1], vec![g]).unwrap()]).unwrap();
        }
        // Hand recurrence: m1 = 1, v1 = 0.004; m2 = 1.5, v2 = 0.007996.
        // m̂2 = 1.5/0.75 = 2, v̂2 = 0.007996/0.001999 = 4.
        let step1 = 1e-5 * 2.0 / (2.0 + 1e-8);
        let m_hat = 1.5 / 0.75;
        let v_hat = (0.999 * 0.004 + (1.0 - 0.999) * 4.0) / (1.0 - 0.999f64.powi(2));
        let step2 = 1e-5 * m_hat / (v_hat.sqrt() + 1e-8);
        let expected = 1.0 - step1 - step2;
        assert!((params.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_linear_decay(1e-5, 0, 200, 100), 1e-5);
        assert_eq!(lr_linear_decay(1e-5, 99, 200, 100), 1e-5);
        assert_eq!(lr_linear_decay(1e-5, 200, 200, 100), 0.0);
        assert_eq!(lr_linear_decay(1e-5, 150, 200, 100), 0.5e-5);
        assert_eq!(lr_linear_decay(1e-5, 0, 0, 0), 0.0);
    }
}
