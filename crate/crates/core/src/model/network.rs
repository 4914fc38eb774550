//! Architecture-independent handle used by the trainer and the projector.

use ndarray::{Array2, Array3};

use super::layers;
use super::loss::{masked_mse, masked_mse_grad, Reduction};
use super::params::ParamSet;
use super::{dcae, mtsae, Arch, ModelConfig};
use crate::{Error, Result};

/// Result of one training-mode pass.
pub struct Step {
    pub loss: f64,
    pub n_masked: usize,
    pub grads: ParamSet<f32>,
    pub running_updates: Vec<(String, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cfg: ModelConfig,
    pub params: ParamSet<f32>,
}

/// Repeat the last step of every window up to `len`.
pub fn edge_pad(x: &Array3<f32>, len: usize) -> Array3<f32> {
    let (b, v, w) = x.dim();
    if w >= len {
        return x.clone();
    }
    Array3::from_shape_fn((b, v, len), |(i, j, t)| x[[i, j, t.min(w - 1)]])
}

impl Network {
    /// `window` fixes the input length of the convolutional baseline and is
    /// ignored by the MTSAE.
    pub fn init(cfg: &ModelConfig, window: usize, rng: &mut crate::Rng) -> Result<Self> {
        let params = match cfg.arch {
            Arch::Mtsae => mtsae::init(cfg, rng)?,
            Arch::Dcae => dcae::init(cfg, dcae::padded_len(window), rng)?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn from_params(cfg: &ModelConfig, params: ParamSet<f32>) -> Self {
        Self {
            cfg: cfg.clone(),
            params,
        }
    }

    /// Input length the network needs, if fixed.
    pub fn fixed_len(&self) -> Option<usize> {
        match self.cfg.arch {
            Arch::Mtsae => None,
            Arch::Dcae => Some(dcae::window_of(&self.params)),
        }
    }

    fn fit_len(&self, x: &Array3<f32>) -> Result<Array3<f32>> {
        match self.fixed_len() {
            Some(len) if x.dim().2 > len => Err(Error::shape(format!(
                "windows of length {} exceed the model input length {len}",
                x.dim().2
            ))),
            Some(len) => Ok(edge_pad(x, len)),
            None => Ok(x.clone()),
        }
    }

    /// Training-mode forward + backward of the mean masked loss.
    /// `mask` holds 0 for masked entries; the MTSAE sees `target * mask`,
    /// the convolutional baseline the unmasked target.
    pub fn train_step(&self, target: &Array3<f32>, mask: &Array3<f32>) -> Result<Step> {
        if target.dim() != mask.dim() {
            return Err(Error::shape(format!(
                "mask {:?} does not match batch {:?}",
                mask.dim(),
                target.dim()
            )));
        }
        match self.cfg.arch {
            Arch::Mtsae => {
                let input = target * mask;
                let trace = mtsae::forward(&self.cfg, &self.params, &input, true)?;
                let t_cm = layers::to_channel_major(target);
                let m_cm = layers::to_channel_major(mask);
                let l = masked_mse(trace.reconstruction.view(), t_cm.view(), m_cm.view(), Reduction::Mean)?;
                let d = masked_mse_grad(trace.reconstruction.view(), t_cm.view(), m_cm.view())?;
                let grads = mtsae::backward(&self.cfg, &self.params, &trace, &d)?;
                Ok(Step {
                    loss: l.value,
                    n_masked: l.n_masked,
                    grads,
                    running_updates: trace.running_updates,
                })
            }
            Arch::Dcae => {
                let x = self.fit_len(target)?;
                let trace = dcae::forward(&self.params, &x)?;
                let t_cm = layers::to_channel_major(&x);
                let all = Array2::<f32>::zeros(t_cm.dim());
                let l = masked_mse(trace.reconstruction.view(), t_cm.view(), all.view(), Reduction::Mean)?;
                let d = masked_mse_grad(trace.reconstruction.view(), t_cm.view(), all.view())?;
                let grads = dcae::backward(&self.params, &trace, &d)?;
                Ok(Step {
                    loss: l.value,
                    n_masked: l.n_masked,
                    grads,
                    running_updates: Vec::new(),
                })
            }
        }
    }

    pub fn apply_running_updates(&mut self, updates: &[(String, Vec<f32>)]) {
        mtsae::apply_running_updates(&mut self.params, updates);
    }

    /// Eval-mode reconstruction as `(batch, v, len)`.
    pub fn reconstruct(&self, input: &Array3<f32>) -> Result<Array3<f32>> {
        match self.cfg.arch {
            Arch::Mtsae => Ok(mtsae::forward(&self.cfg, &self.params, input, false)?.reconstruction_3d()),
            Arch::Dcae => {
                let len = input.dim().2;
                let r = dcae::forward(&self.params, &self.fit_len(input)?)?.reconstruction_3d();
                Ok(r.slice(ndarray::s![.., .., ..len]).to_owned())
            }
        }
    }

    /// Eval-mode sum of squared errors over masked entries and their count.
    pub fn masked_error(&self, target: &Array3<f32>, mask: &Array3<f32>) -> Result<(f64, usize)> {
        let input = match self.cfg.arch {
            Arch::Mtsae => target * mask,
            Arch::Dcae => target.clone(),
        };
        let recon = self.reconstruct(&input)?;
        let mask = match self.cfg.arch {
            Arch::Mtsae => mask.clone(),
            Arch::Dcae => Array3::zeros(mask.dim()),
        };
        let l = masked_mse(recon.view(), target.view(), mask.view(), Reduction::Sum)?;
        Ok((l.value, l.n_masked))
    }

    /// One embedding row per window: the time-averaged last inception
    /// activation, or the bottleneck code of the baseline.
    pub fn embed(&self, batch: &Array3<f32>) -> Result<Array2<f32>> {
        match self.cfg.arch {
            Arch::Mtsae => Ok(mtsae::forward(&self.cfg, &self.params, batch, false)?.pooled_embedding()),
            Arch::Dcae => Ok(dcae::forward(&self.params, &self.fit_len(batch)?)?.embedding()),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_padding_repeats_last_step() {
        let x = Array3::from_shape_fn((1, 1, 3), |(_, _, t)| t as f32);
        let p = edge_pad(&x, 5);
        assert_eq!(p.iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn baseline_embeds_short_windows() {
        let cfg = ModelConfig::dcae(3);
        let net = Network::init(&cfg, 30, &mut crate::seeded_rng(0)).unwrap();
        assert_eq!(net.fixed_len(), Some(32));
        let x = Array3::<f32>::ones((4, 3, 30));
        assert_eq!(net.embed(&x).unwrap().dim(), (4, 60));
        assert_eq!(net.reconstruct(&x).unwrap().dim(), (4, 3, 30));
    }
}
