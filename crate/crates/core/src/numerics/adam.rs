use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment accumulators mirroring a parameter set, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }

    /// One bias-corrected update of every parameter:
    /// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<(), NumericsError> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.first.len() {
            return Err(NumericsError::ShapeMismatch {
                name: "adam parameter count".into(),
                expected: vec![self.first.len()],
                found: vec![params.len()],
            });
        }
        for ((name, p), (_, g)) in params.iter().zip(&grads) {
            g.expect_shape(name, p.shape())?;
        }
        for (k, m) in self.first.iter().enumerate() {
            params[k].1.expect_shape(&params[k].0, m.shape())?;
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let g = grads[k].1.data();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
