//! AdamW and exponential moving averages over [`Module`] parameters.

use crate::nn::Module;
use crate::tensor::{Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Per-parameter first and second moments, indexed by visit order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

/// Decoupled-weight-decay Adam. Parameters without a gradient entry are
/// skipped entirely (no decay, no moment update).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: AdamWState,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            state: AdamWState::default(),
        }
    }

    pub fn state(&self) -> &AdamWState {
        &self.state
    }

    pub fn load_state(&mut self, state: AdamWState) {
        self.state = state;
    }

    /// One update over the concatenated parameter lists of `modules`.
    pub fn step(&mut self, modules: &mut [&mut dyn Module], grads: &Gradients, lr: f32) {
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let state = &mut self.state;
        let mut index = 0usize;
        for module in modules.iter_mut() {
            module.visit_mut("", &mut |_, param| {
                let i = index;
                index += 1;
                if state.first.len() <= i {
                    state.first.resize(i + 1, Vec::new());
                    state.second.resize(i + 1, Vec::new());
                }
                let Some(g) = grads.get(param) else { return };
                let n = param.numel();
                if state.first[i].len() != n {
                    state.first[i] = vec![0.0; n];
                    state.second[i] = vec![0.0; n];
                }
                let (m, v) = (&mut state.first[i], &mut state.second[i]);
                let mut values = param.to_vec();
                for k in 0..n {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    values[k] -= lr * weight_decay * values[k];
                    values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                *param = Tensor::param(param.shape(), values);
            });
        }
    }
}

/// `teacher <- decay * teacher + (1 - decay) * student`, parameter-wise.
pub fn ema_update(teacher: &mut dyn Module, student: &dyn Module, decay: f32) {
    let src = student.parameters();
    let mut i = 0;
    teacher.visit_mut("", &mut |name, t| {
        let s = &src[i];
        i += 1;
        assert_eq!(t.shape(), s.shape(), "ema_update: shape mismatch at {name}");
        let values = t
            .data()
            .iter()
            .zip(s.data())
            .map(|(&a, &b)| decay * a + (1.0 - decay) * b)
            .collect();
        *t = Tensor::from_vec(t.shape(), values);
    });
    assert_eq!(i, src.len(), "ema_update: parameter count mismatch");
}
