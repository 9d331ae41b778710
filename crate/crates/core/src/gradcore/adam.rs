use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Optimizer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First and second moment estimates for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one bias-corrected ADAM update from the gradient slots, then
/// zeroes them. Gradients are checked for finiteness before anything moves.
pub fn adam_step(params: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::invalid("optimizer state does not match parameter store"));
    }
    for (name, t) in params.tensors_mut() {
        if let Some(g) = t.grad() {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}[{i}] is {}", g[i])));
            }
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((_, tensor), m), v) in params.tensors_mut().zip(&mut state.m).zip(&mut state.v) {
        let (values, grad) = tensor.split_mut();
        let Some(grad) = grad else { continue };
        for (((p, g), mi), vi) in values.iter_mut().zip(grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * *g;
            *vi = beta2 * *vi + (1.0 - beta2) * *g * *g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Tensor;

    fn store_with(values: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(&[0.3, -1.2]);
        let before = s.clone();
        let mut st = AdamState::new(&s, AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get(s.id("p").unwrap()).values(), before.get(before.id("p").unwrap()).values());
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(&[1.0]);
        let id = s.id("p").unwrap();
        s.get_mut(id).grad_mut().unwrap()[0] = 1.0;
        let mut st = AdamState::new(&s, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        adam_step(&mut s, &mut st).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((s.get(id).values()[0] - expected).abs() < 1e-15);
        assert!((s.get(id).values()[0] - 0.9).abs() < 1e-8);
        assert_eq!(s.get(id).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn symmetric_parameters_update_identically() {
        let mut s = store_with(&[0.5, 0.5]);
        let id = s.id("p").unwrap();
        let mut st = AdamState::new(&s, AdamConfig::default());
        for k in 0..5 {
            s.get_mut(id).grad_mut().unwrap().copy_from_slice(&[0.1 * k as f64, 0.1 * k as f64]);
            adam_step(&mut s, &mut st).unwrap();
            let v = s.get(id).values();
            assert_eq!(v[0].to_bits(), v[1].to_bits());
        }
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(&[0.0, 0.0]);
        let id = s.id("p").unwrap();
        s.get_mut(id).grad_mut().unwrap()[1] = f64::NAN;
        let mut st = AdamState::new(&s, AdamConfig::default());
        let err = adam_step(&mut s, &mut st).unwrap_err().to_string();
        assert!(err.contains("p[1]"), "{err}");
        assert_eq!(st.step_count(), 0);
    }
}
