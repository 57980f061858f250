use serde::{Deserialize, Serialize};

use crate::{Float, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step
/// and must keep matching the parameter list afterwards.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: vec![], v: vec![] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<(&mut Tensor<T>, &Tensor<T>)>) -> Result<(), NnError> {
        if self.step == 0 && self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if params.len() != self.m.len() {
            return Err(NnError::Dimension { op: "adam", left: vec![params.len()], right: vec![self.m.len()] });
        }
        for ((p, g), m) in params.iter().zip(&self.m) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(NnError::Dimension { op: "adam", left: p.shape().to_vec(), right: g.shape().to_vec() });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        // lr * m_hat / (sqrt(v_hat) + eps) == step_size * m / (sqrt(v) + eps_hat)
        let step_size = T::of(lr * c2.sqrt() / c1);
        let eps_hat = T::of(eps * c2.sqrt());
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for (((p, g), m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let (w, g) = (p.data_mut(), g.data());
            let n = w.len();
            let (g, m, v) = (&g[..n], &mut m[..n], &mut v[..n]);
            for i in 0..n {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                w[i] -= step_size * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}
