use std::collections::BTreeMap;

use crate::error::{contract, Result};
use crate::numerics::{Gradients, ParamStore, Tensor};

/// Adam hyperparameters. Defaults: lr 0.001, betas (0.9, 0.999), epsilon 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam step over every parameter that has a gradient.
///
/// Parameters without a gradient entry are left untouched; their moments are
/// not decayed either.
pub fn adam_update(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| contract(format!("gradient for unknown parameter `{name}`")))?;
        if !p.same_shape(g) {
            return Err(contract(format!(
                "gradient shape {:?} does not match parameter `{name}` shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        for moments in [&state.first, &state.second] {
            if let Some(m) = moments.get(name) {
                if !m.same_shape(p) {
                    return Err(contract(format!("moment shape mismatch for `{name}`")));
                }
            }
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    for (name, g) in grads.iter() {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| zeros_like(g));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| zeros_like(g));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let m_hat = md[i] / correction1;
            let v_hat = vd[i] / correction2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

fn zeros_like(t: &Tensor) -> Tensor {
    if t.shape().is_empty() {
        Tensor::scalar(0.0)
    } else {
        Tensor::zeros(t.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, value: f64) -> ParamStore {
        [(name.to_string(), Tensor::scalar(value))]
            .into_iter()
            .collect()
    }

    fn grad(name: &str, value: f64) -> Gradients {
        let mut g = Gradients::default();
        g.insert(name, Tensor::scalar(value));
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let mut params = single("w", 0.0);
        let mut state = AdamState::new(AdamConfig::default());
        adam_update(&mut params, &grad("w", 1.0), &mut state).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((params.get("w").unwrap().item() - expected).abs() < 1e-18);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single("w", 0.25);
        let mut state = AdamState::new(AdamConfig::default());
        adam_update(&mut params, &grad("w", 0.0), &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().item(), 0.25);
    }

    #[test]
    fn replay_from_saved_state_is_bit_identical() {
        let mut params = single("w", 0.5);
        let mut state = AdamState::new(AdamConfig::default());
        adam_update(&mut params, &grad("w", 0.3), &mut state).unwrap();
        let (saved_params, saved_state) = (params.clone(), state.clone());

        adam_update(&mut params, &grad("w", -0.7), &mut state).unwrap();
        let mut replay_params = saved_params;
        let mut replay_state = saved_state;
        adam_update(&mut replay_params, &grad("w", -0.7), &mut replay_state).unwrap();
        assert_eq!(
            params.get("w").unwrap().item().to_bits(),
            replay_params.get("w").unwrap().item().to_bits()
        );
        assert_eq!(state, replay_state);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut params: ParamStore = [("w".to_string(), Tensor::vector(vec![0.0, 0.0]))]
            .into_iter()
            .collect();
        let mut state = AdamState::new(AdamConfig::default());
        let err = adam_update(&mut params, &grad("w", 1.0), &mut state).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
        assert_eq!(state.step(), 0);
    }
}
