//! Central finite-difference oracle for the analytic backward passes.

use ndarray::{s, Array3};

use super::params::{is_trainable, ParamSet};
use super::real::Real;
use super::{layers, masked_mse, masked_mse_grad, mtsae, ModelConfig, Reduction};
use crate::masking::{gen_mask, MaskConfig};

/// Per-tensor comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub n_values: usize,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`; 0 when both vanish.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compare `analytic` against central differences of `loss` with step `eps`.
///
/// `loss` must evaluate the same objective the analytic gradient was taken
/// of, as a pure function of the parameters.
pub fn check_gradients<F: Real>(
    params: &ParamSet<F>,
    analytic: &ParamSet<F>,
    eps: f64,
    mut loss: impl FnMut(&ParamSet<F>) -> f64,
) -> Vec<TensorCheck> {
    let mut work = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| is_trainable(n))
        .cloned()
        .collect();
    let mut out = Vec::new();
    for name in names {
        let n = params.get(&name).len();
        let mut diff_sq = 0.0;
        let mut num_sq = 0.0;
        let an = &analytic.get(&name).data;
        for i in 0..n {
            let orig = work.get(&name).data[i];
            work.get_mut(&name).data[i] = orig + F::lit(eps);
            let up = loss(&work);
            work.get_mut(&name).data[i] = orig - F::lit(eps);
            let down = loss(&work);
            work.get_mut(&name).data[i] = orig;
            let num = (up - down) / (2.0 * eps);
            let a = an[i].as_f64();
            diff_sq += (a - num) * (a - num);
            num_sq += num * num;
        }
        let an_sq: f64 = an.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        let denom = an_sq.sqrt().max(num_sq.sqrt());
        let rel_error = if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom };
        out.push(TensorCheck {
            name,
            n_values: n,
            rel_error,
            analytic_norm: an_sq.sqrt(),
        });
    }
    out
}

/// Deterministic pseudo-random batch for checks.
pub fn test_batch(batch: usize, vars: usize, len: usize, seed: u64) -> Array3<f64> {
    use rand::Rng as _;
    let mut rng = crate::seeded_rng(seed);
    Array3::from_shape_fn((batch, vars, len), |_| rng.random_range(-2.0..2.0))
}

/// Stateless r = 0.5 masks as a `batch x vars x len` array.
pub fn test_masks(batch: usize, vars: usize, len: usize, seed: u64) -> Array3<f64> {
    let mut rng = crate::seeded_rng(seed);
    let mut out = Array3::zeros((batch, vars, len));
    for b in 0..batch {
        let m = gen_mask(vars, len, &MaskConfig::stateless(0.5), &mut rng).expect("valid mask config");
        out.slice_mut(s![b, .., ..]).assign(&m.to_array::<f64>());
    }
    out
}

/// Gradient check of the MTSAE masked loss in f64 on a random batch of
/// `batch` windows of length `len`, parameters initialised from `seed`.
pub fn check_mtsae(cfg: &ModelConfig, batch: usize, len: usize, seed: u64, eps: f64) -> Vec<TensorCheck> {
    let mut rng = crate::seeded_rng(seed);
    let params = mtsae::init::<f64>(cfg, &mut rng).expect("valid model config");
    let x = test_batch(batch, cfg.in_vars, len, seed + 100);
    let m = test_masks(batch, cfg.in_vars, len, seed + 200);
    let input = &x * &m;
    let loss = |p: &ParamSet<f64>| {
        let tr = mtsae::forward(cfg, p, &input, true).expect("forward");
        masked_mse(tr.reconstruction_3d().view(), x.view(), m.view(), Reduction::Mean)
            .expect("loss")
            .value
    };
    let tr = mtsae::forward(cfg, &params, &input, true).expect("forward");
    let g3 = masked_mse_grad(tr.reconstruction_3d().view(), x.view(), m.view()).expect("loss gradient");
    let grads = mtsae::backward(cfg, &params, &tr, &layers::to_channel_major(&g3)).expect("backward");
    check_gradients(&params, &grads, eps, loss)
}
