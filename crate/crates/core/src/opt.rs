//! Adam with bias correction. One moment slot per parameter, updated in the
//! order the parameters are handed in — callers must keep that order stable
//! across steps.

use crate::autodiff::{Parameter, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// One update over a parameter group. `grads[i]` pairs with `params[i]`;
    /// `None` means the parameter did not appear in the graph (zero gradient).
    pub fn step(&mut self, params: &mut [&mut Parameter<f64>], grads: &[Option<Tensor<f64>>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter group changed size");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let zero;
            let g: &[f64] = match &grads[i] {
                Some(t) => {
                    assert_eq!(t.len(), p.tensor.len(), "gradient shape drifted");
                    t.data()
                }
                None => {
                    zero = vec![0.0; p.tensor.len()];
                    &zero
                }
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
    }
}
