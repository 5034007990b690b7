use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.0004;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update of every trainable parameter from its stored
/// gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if !store.has_grads() {
        return Err(Error::usage("adam_step called without gradients"));
    }
    state.first.resize(store.len(), None);
    state.second.resize(store.len(), None);
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        let grad = match &p.grad {
            Some(g) => g.clone(),
            None => return Err(Error::usage(format!("missing gradient for {}", p.name))),
        };
        let m = state.first[id.index()].get_or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state.second[id.index()].get_or_insert_with(|| Tensor::zeros(grad.shape()));
        let vals = p.value.data_mut();
        for k in 0..vals.len() {
            let g = grad.data()[k];
            let mk = &mut m.data_mut()[k];
            *mk = beta1 * *mk + (1.0 - beta1) * g;
            let vk = &mut v.data_mut()[k];
            *vk = beta2 * *vk + (1.0 - beta2) * g * g;
            let mhat = m.data()[k] / c1;
            let vhat = v.data()[k] / c2;
            vals[k] -= lr * mhat / (vhat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new(0);
        let id = s.add("w", &[3, 2], Init::FanIn).unwrap();
        let before = s.value(id).clone();
        s.get_mut(id).grad = Some(Tensor::zeros(&[3, 2]));
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut s, &mut st, DEFAULT_LR).unwrap();
        assert_eq!(s.value(id), &before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for g in [-3.0, 0.02, 7.5] {
            let mut s = ParamStore::new(0);
            let id = s.add("w", &[1], Init::Constant(0.5)).unwrap();
            s.get_mut(id).grad = Some(Tensor::scalar(g));
            let mut st = AdamState::new(AdamConfig::default());
            adam_step(&mut s, &mut st, DEFAULT_LR).unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let delta = s.value(id).item() - 0.5;
            let expect = -DEFAULT_LR * g / (g.abs() + 1e-8);
            assert!((delta - expect).abs() < 1e-15, "{delta} vs {expect}");
            assert!((delta.abs() - DEFAULT_LR).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_grads_is_usage_error() {
        let mut s = ParamStore::new(0);
        s.add("w", &[1], Init::Zeros).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        assert!(matches!(adam_step(&mut s, &mut st, 0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(DEFAULT_LR, 0.0004);
    }
}
