//! Training loop: windows at stride 1, train/validation split,
//! normalization, per-batch random truncation, fresh masks every iteration,
//! Adam, and fixed seeded masks for validation.

use std::time::Instant;

use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datastore::{
    normalize, normalize_batch, slide_windows, split_train_val, EncoderArtifact, EncoderMeta, NormMode,
    NormStats, Region, TimeSeriesDataset, WindowConfig, WindowSet,
};
use crate::masking::{gen_mask, Mask, MaskConfig};
use crate::model::{Adam, AdamConfig, Arch, ModelConfig, Network};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    /// Sliding-window size; `w_max` must not exceed it.
    pub w: usize,
    pub w_min: usize,
    pub w_max: usize,
    pub mask: MaskConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub norm_mode: NormMode,
    pub seed: u64,
    /// Stop each epoch after this many batches.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
    pub n_modules: usize,
    pub branch_filters: usize,
}

impl TrainConfig {
    /// MTSAE defaults with `w = w_max`.
    pub fn new(w_min: usize, w_max: usize, mask: MaskConfig) -> Self {
        Self {
            arch: Arch::Mtsae,
            w: w_max,
            w_min,
            w_max,
            mask,
            batch_size: 32,
            epochs: 50,
            learning_rate: 1e-3,
            norm_mode: NormMode::Dataset,
            seed: 0,
            max_batches_per_epoch: None,
            n_modules: 6,
            branch_filters: 32,
        }
    }

    pub fn fixed(w: usize, mask: MaskConfig) -> Self {
        Self::new(w, w, mask)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_min == 0 || self.w_min > self.w_max || self.w_max > self.w {
            return Err(Error::invalid(format!(
                "window interval must satisfy 1 <= w_min <= w_max <= w, got [{}, {}] with w={}",
                self.w_min, self.w_max, self.w
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        self.mask.validate()
    }

    pub fn model_config(&self, in_vars: usize) -> ModelConfig {
        let mut m = match self.arch {
            Arch::Mtsae => ModelConfig::mtsae(in_vars),
            Arch::Dcae => ModelConfig::dcae(in_vars),
        };
        m.n_modules = self.n_modules;
        m.branch_filters = self.branch_filters;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub encoder_id: String,
    pub dataset_id: String,
    /// Validation loss of the untrained network.
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub final_val_loss: f64,
    pub iterations: usize,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    pub wall_time_s: f64,
    pub seed: u64,
}

/// What one optimizer step consumed; handed to the observer of
/// [`train_observed`].
pub struct StepInfo<'a> {
    pub iteration: usize,
    pub epoch: usize,
    pub windows: &'a [usize],
    pub len: usize,
    pub masks: &'a [Mask],
    pub loss: f64,
}

/// Draw `w'` uniformly from `[w_min, w_max]`.
pub fn draw_len(w_min: usize, w_max: usize, rng: &mut crate::Rng) -> usize {
    rng.random_range(w_min..=w_max)
}

/// Keep the first `w'` steps of every element, one `w'` per batch.
pub fn truncate_batch<F: Clone>(
    batch: &Array3<F>,
    w_min: usize,
    w_max: usize,
    rng: &mut crate::Rng,
) -> Result<Array3<F>> {
    let w = batch.dim().2;
    if w_min == 0 || w_min > w_max || w_max > w {
        return Err(Error::invalid(format!(
            "truncation interval [{w_min}, {w_max}] invalid for windows of length {w}"
        )));
    }
    let len = draw_len(w_min, w_max, rng);
    Ok(batch.slice(s![.., .., ..len]).to_owned())
}

fn stack_masks(masks: &[Mask]) -> Array3<f32> {
    let (v, len) = masks[0].shape();
    let mut out = Array3::<f32>::zeros((masks.len(), v, len));
    for (b, m) in masks.iter().enumerate() {
        out.slice_mut(s![b, .., ..]).assign(&m.to_array::<f32>());
    }
    out
}

const VAL_BATCH: usize = 64;
const VAL_MASK_STREAM: u64 = 0x5eed_0f_7a11;

/// Fixed validation masks, one per validation window, at full length.
pub fn validation_masks(n: usize, vars: usize, len: usize, cfg: &MaskConfig, seed: u64) -> Result<Vec<Mask>> {
    let mut rng = crate::seeded_rng(seed ^ VAL_MASK_STREAM);
    (0..n).map(|_| gen_mask(vars, len, cfg, &mut rng)).collect()
}

/// Mean masked loss over `idx` with the given masks (pooled over all
/// masked entries). Eval-mode, so repeated calls agree.
pub fn validate(net: &Network, windows: &WindowSet, idx: &[usize], masks: &[Mask], norm: NormMode) -> Result<f64> {
    if idx.len() != masks.len() {
        return Err(Error::shape("one validation mask per window is required"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ci, chunk) in idx.chunks(VAL_BATCH).enumerate() {
        let mut x = windows.batch::<f32>(chunk, windows.config.w);
        if norm == NormMode::Batch {
            normalize_batch(&mut x);
        }
        let m = stack_masks(&masks[ci * VAL_BATCH..ci * VAL_BATCH + chunk.len()]);
        let (s, n) = net.masked_error(&x, &m)?;
        sum += s;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn default_encoder_id(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> String {
    format!("{}-{}-w{}-{}-seed{}", ds.id, cfg.arch, cfg.w_min, cfg.w_max, cfg.seed)
}

pub fn train(ds: &TimeSeriesDataset, cfg: &TrainConfig, id: Option<&str>) -> Result<(EncoderArtifact, TrainReport)> {
    train_observed(ds, cfg, id, |_| {})
}

/// [`train`] with a callback after every optimizer step.
pub fn train_observed(
    ds: &TimeSeriesDataset,
    cfg: &TrainConfig,
    id: Option<&str>,
    mut observe: impl FnMut(&StepInfo<'_>),
) -> Result<(EncoderArtifact, TrainReport)> {
    cfg.validate()?;
    crate::runtime::tune_allocator();
    let started = Instant::now();
    let v = ds.n_vars();

    let raw = slide_windows(ds, WindowConfig::new(cfg.w, 1), Region::Train)?;
    let mut split_rng = crate::seeded_rng(cfg.seed.wrapping_add(1));
    let (train_idx, val_idx) = split_train_val(raw.len(), ds.has_test_split(), &mut split_rng)?;
    let (windows, norm_stats): (WindowSet, NormStats) = normalize(&raw, cfg.norm_mode);
    drop(raw);

    let model_cfg = cfg.model_config(v);
    let mut init_rng = crate::seeded_rng(cfg.seed);
    let mut net = Network::init(&model_cfg, cfg.w, &mut init_rng)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &net.params,
    );
    let val_masks = validation_masks(val_idx.len(), v, cfg.w, &cfg.mask, cfg.seed)?;
    let initial_val_loss = validate(&net, &windows, &val_idx, &val_masks, cfg.norm_mode)?;

    let mut rng = crate::seeded_rng(cfg.seed.wrapping_add(2));
    let mut order = train_idx.clone();
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_batches_per_epoch.is_some_and(|m| batches >= m) {
                break;
            }
            let len = draw_len(cfg.w_min, cfg.w_max, &mut rng);
            let mut x = windows.batch::<f32>(chunk, len);
            if cfg.norm_mode == NormMode::Batch {
                normalize_batch(&mut x);
            }
            let masks: Vec<Mask> = (0..chunk.len())
                .map(|_| gen_mask(v, len, &cfg.mask, &mut rng))
                .collect::<Result<_>>()?;
            let step = net.train_step(&x, &stack_masks(&masks))?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged { iteration });
            }
            opt.update(&mut net.params, &step.grads);
            net.apply_running_updates(&step.running_updates);
            observe(&StepInfo {
                iteration,
                epoch,
                windows: chunk,
                len,
                masks: &masks,
                loss: step.loss,
            });
            epoch_loss += step.loss;
            batches += 1;
            iteration += 1;
        }
        train_curve.push(epoch_loss / batches.max(1) as f64);
        let vl = validate(&net, &windows, &val_idx, &val_masks, cfg.norm_mode)?;
        if !vl.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        log::info!(
            "epoch {}/{}: train {:.5} val {:.5}",
            epoch + 1,
            cfg.epochs,
            train_curve[epoch],
            vl
        );
        val_curve.push(vl);
    }

    let final_val_loss = val_curve.last().copied().unwrap_or(initial_val_loss);
    let encoder_id = id.map(str::to_string).unwrap_or_else(|| default_encoder_id(ds, cfg));
    let meta = EncoderMeta {
        id: encoder_id.clone(),
        dataset_id: ds.id.clone(),
        arch: cfg.arch,
        n_modules: model_cfg.n_modules,
        filters: model_cfg.branch_filters,
        kernel_sizes: model_cfg.kernel_sizes,
        bottleneck: model_cfg.bottleneck,
        in_vars: v,
        w: cfg.w,
        w_min: cfg.w_min,
        w_max: cfg.w_max,
        mask: cfg.mask,
        norm_mode: cfg.norm_mode,
        norm_stats,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        val_loss: final_val_loss,
        created_at: chrono::Utc::now().to_rfc3339(),
    };
    let report = TrainReport {
        encoder_id,
        dataset_id: ds.id.clone(),
        initial_val_loss,
        train_loss: train_curve,
        val_loss: val_curve,
        final_val_loss,
        iterations: iteration,
        n_train_windows: train_idx.len(),
        n_val_windows: val_idx.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    Ok((
        EncoderArtifact {
            meta,
            params: net.params,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_interval_is_identity() {
        let x = Array3::from_shape_fn((2, 1, 8), |(a, _, c)| (a * 8 + c) as f32);
        let mut rng = crate::seeded_rng(0);
        assert_eq!(truncate_batch(&x, 8, 8, &mut rng).unwrap(), x);
        let t = truncate_batch(&x, 3, 6, &mut rng).unwrap();
        assert_eq!(t, x.slice(s![.., .., ..t.dim().2]).to_owned());
        assert!(truncate_batch(&x, 5, 9, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(36, 72, MaskConfig::stateful(0.4, 3.0));
        assert!(c.validate().is_ok());
        c.w_min = 80;
        assert!(c.validate().is_err());
    }
}
