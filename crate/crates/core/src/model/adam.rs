use serde::{Deserialize, Serialize};

use super::params::{is_trainable, ParamSet};
use super::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam with bias correction and a constant learning rate.
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    m: ParamSet<F>,
    v: ParamSet<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<F>) -> Self {
        Self {
            cfg,
            step: 0,
            m: params.zeros_like_trainable(),
            v: params.zeros_like_trainable(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = F::lit(self.cfg.beta1);
        let b2 = F::lit(self.cfg.beta2);
        let c1 = 1.0 - self.cfg.beta1.powf(t);
        let c2 = 1.0 - self.cfg.beta2.powf(t);
        let lr = F::lit(self.cfg.lr * c2.sqrt() / c1);
        let eps = F::lit(self.cfg.eps * c2.sqrt());
        for (name, p) in params.iter_mut() {
            if !is_trainable(name) {
                continue;
            }
            let Some(g) = grads.try_get(name) else { continue };
            let m = self.m.get_mut(name);
            let v = self.v.get_mut(name);
            for (((w, &gi), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                *w -= lr * *mi / (vi.sqrt() + eps);
            }
        }
    }
}
