//! Masked time-series autoencoder: InceptionTime encoder + pointwise decoder.
//!
//! Tensor names:
//! `module{k}.bottleneck.kernel`, `module{k}.branch{j}.kernel` (j = 0..2 for
//! the wide convolutions, j = 3 for the conv after max pooling),
//! `module{k}.bn.{scale,shift,mean,var}`, `module{k}.shortcut.kernel`,
//! `module{k}.shortcut_bn.{scale,shift,mean,var}`, `decoder.kernel`,
//! `decoder.bias`.

use ndarray::{s, Array2, Array3, Axis};

use super::layers::{self, BnCache, ConvInput};
use super::params::{ParamSet, Tensor};
use super::real::Real;
use super::ModelConfig;
use crate::{Error, Result};

fn name(module: usize, rest: &str) -> String {
    format!("module{module}.{rest}")
}

/// Modules whose output gets the residual shortcut added before the ReLU.
pub fn has_residual(module: usize) -> bool {
    module % 3 == 2
}

fn uses_bottleneck(cfg: &ModelConfig, c_in: usize) -> bool {
    c_in > cfg.bottleneck
}

fn module_in_channels(cfg: &ModelConfig, module: usize) -> usize {
    if module == 0 {
        cfg.in_vars
    } else {
        cfg.embedding_dim()
    }
}

fn bn_tensors<F: Real>(p: &mut ParamSet<F>, prefix: &str, c: usize) {
    p.insert(format!("{prefix}.scale"), Tensor::filled(&[c], F::one()));
    p.insert(format!("{prefix}.shift"), Tensor::zeros(&[c]));
    p.insert(format!("{prefix}.mean"), Tensor::zeros(&[c]));
    p.insert(format!("{prefix}.var"), Tensor::filled(&[c], F::one()));
}

/// Glorot-uniform kernels, unit batch-norm scale, zero shift, zero/one
/// running statistics, zero decoder bias.
pub fn init<F: Real>(cfg: &ModelConfig, rng: &mut crate::Rng) -> Result<ParamSet<F>> {
    cfg.validate()?;
    let nf = cfg.branch_filters;
    let out_c = cfg.embedding_dim();
    let mut p = ParamSet::new();
    for d in 0..cfg.n_modules {
        let c_in = module_in_channels(cfg, d);
        let conv_in = if uses_bottleneck(cfg, c_in) {
            p.insert(
                name(d, "bottleneck.kernel"),
                Tensor::glorot(&[cfg.bottleneck, c_in, 1], rng),
            );
            cfg.bottleneck
        } else {
            c_in
        };
        for (j, &k) in cfg.kernel_sizes.iter().enumerate() {
            p.insert(
                name(d, &format!("branch{j}.kernel")),
                Tensor::glorot(&[nf, conv_in, k], rng),
            );
        }
        p.insert(
            name(d, "branch3.kernel"),
            Tensor::glorot(&[nf, c_in, 1], rng),
        );
        bn_tensors(&mut p, &name(d, "bn"), out_c);
        if has_residual(d) {
            let res_c = module_in_channels(cfg, d - 2);
            p.insert(
                name(d, "shortcut.kernel"),
                Tensor::glorot(&[out_c, res_c, 1], rng),
            );
            bn_tensors(&mut p, &name(d, "shortcut_bn"), out_c);
        }
    }
    p.insert(
        "decoder.kernel",
        Tensor::glorot(&[cfg.in_vars, out_c, 1], rng),
    );
    p.insert("decoder.bias", Tensor::zeros(&[cfg.in_vars]));
    Ok(p)
}

struct ModuleCache<F> {
    bottleneck_in: bool,
    branch_inputs: Vec<ConvInput<F>>,
    pool_out: ConvInput<F>,
    pool_arg: Vec<u8>,
    bn: BnCache<F>,
    shortcut_bn: Option<BnCache<F>>,
}

/// Output of a forward pass plus everything backward needs.
pub struct MtsaeTrace<F> {
    pub batch: usize,
    pub len: usize,
    /// Channel-major reconstruction `(v, batch * len)`.
    pub reconstruction: Array2<F>,
    /// `hidden[0]` is the input, `hidden[d + 1]` the output of module `d`.
    hidden: Vec<Array2<F>>,
    caches: Vec<ModuleCache<F>>,
    /// Batch statistics for the running-stat update (training mode only).
    pub running_updates: Vec<(String, Vec<F>)>,
}

impl<F: Real> MtsaeTrace<F> {
    /// Channel-major activation of the last inception module.
    pub fn embedding_activation(&self) -> &Array2<F> {
        self.hidden.last().expect("at least one module")
    }

    /// Reconstruction as `(batch, v, len)`.
    pub fn reconstruction_3d(&self) -> Array3<F> {
        layers::from_channel_major(&self.reconstruction, self.len)
    }

    /// Embedding activation as `(batch, 128, len)`.
    pub fn embedding_3d(&self) -> Array3<F> {
        layers::from_channel_major(self.embedding_activation(), self.len)
    }

    /// Time-averaged embedding, `(batch, 128)`.
    pub fn pooled_embedding(&self) -> Array2<F> {
        let act = self.embedding_activation();
        let (c, _) = act.dim();
        let mut out = Array2::<F>::zeros((self.batch, c));
        let inv = F::one() / F::lit(self.len as f64);
        for ci in 0..c {
            for b in 0..self.batch {
                let s: F = act
                    .slice(s![ci, b * self.len..(b + 1) * self.len])
                    .iter()
                    .copied()
                    .sum();
                out[[b, ci]] = s * inv;
            }
        }
        out
    }
}

fn check_input<F: Real>(params: &ParamSet<F>, channels: usize) -> Result<()> {
    let dec = params.get("decoder.kernel");
    if dec.shape[0] != channels {
        return Err(Error::shape(format!(
            "model expects {} input variables, batch has {channels}",
            dec.shape[0]
        )));
    }
    Ok(())
}

/// Forward pass on a `(batch, v, len)` batch.
pub fn forward<F: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<F>,
    batch: &Array3<F>,
    training: bool,
) -> Result<MtsaeTrace<F>> {
    let (b, v, len) = batch.dim();
    if len == 0 || b == 0 {
        return Err(Error::shape("empty batch".to_string()));
    }
    check_input(params, v)?;
    forward_cm(cfg, params, layers::to_channel_major(batch), b, len, training)
}

/// Forward pass on a channel-major input `(v, batch * len)`.
pub fn forward_cm<F: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<F>,
    input: Array2<F>,
    batch: usize,
    len: usize,
    training: bool,
) -> Result<MtsaeTrace<F>> {
    check_input(params, input.nrows())?;
    let mut hidden = Vec::with_capacity(cfg.n_modules + 1);
    hidden.push(input);
    let mut caches = Vec::new();
    let mut running_updates = Vec::new();

    for d in 0..cfg.n_modules {
        let x = &hidden[d];
        let c_in = x.nrows();
        let bottleneck_in = uses_bottleneck(cfg, c_in);
        let z = if bottleneck_in {
            Some(layers::matmul(
                params.get(&name(d, "bottleneck.kernel")).as_matrix(),
                x.view(),
            ))
        } else {
            None
        };
        let zin = z.as_ref().unwrap_or(x);
        let branch_inputs: Vec<ConvInput<F>> = cfg
            .kernel_sizes
            .iter()
            .map(|&k| {
                if k == 1 {
                    ConvInput::Pointwise(zin.clone())
                } else {
                    ConvInput::Unfolded(layers::im2col(zin, len, k))
                }
            })
            .collect();
        let (pool, pool_arg) = layers::maxpool3_forward(x, len);
        let pool_out = ConvInput::Pointwise(pool);

        let nf = cfg.branch_filters;
        let mut concat = Array2::<F>::zeros((4 * nf, batch * len));
        for (j, inp) in branch_inputs.iter().enumerate() {
            let w = params.get(&name(d, &format!("branch{j}.kernel")));
            let y = layers::conv_forward(w.as_matrix(), inp);
            concat.slice_mut(s![j * nf..(j + 1) * nf, ..]).assign(&y);
        }
        let y3 = layers::conv_forward(params.get(&name(d, "branch3.kernel")).as_matrix(), &pool_out);
        concat.slice_mut(s![3 * nf..4 * nf, ..]).assign(&y3);

        let (mut pre, bn_cache) = batch_norm(params, &name(d, "bn"), &concat, training, &mut running_updates);
        let shortcut_bn = if has_residual(d) {
            let src = &hidden[d - 2];
            let sc = layers::matmul(params.get(&name(d, "shortcut.kernel")).as_matrix(), src.view());
            let (sbn, cache) =
                batch_norm(params, &name(d, "shortcut_bn"), &sc, training, &mut running_updates);
            pre += &sbn;
            cache
        } else {
            None
        };
        layers::relu_inplace(&mut pre);
        if training {
            caches.push(ModuleCache {
                bottleneck_in,
                branch_inputs,
                pool_out,
                pool_arg,
                bn: bn_cache.expect("training cache"),
                shortcut_bn,
            });
        }
        hidden.push(pre);
    }

    let last = hidden.last().expect("module output");
    let mut reconstruction = layers::matmul(params.get("decoder.kernel").as_matrix(), last.view());
    layers::add_bias(&mut reconstruction, &params.get("decoder.bias").data);

    if !training {
        // keep only the input and the embedding activation
        let n = hidden.len();
        hidden.drain(1..n - 1);
    }

    Ok(MtsaeTrace {
        batch,
        len,
        reconstruction,
        hidden,
        caches,
        running_updates,
    })
}

fn batch_norm<F: Real>(
    params: &ParamSet<F>,
    prefix: &str,
    x: &Array2<F>,
    training: bool,
    updates: &mut Vec<(String, Vec<F>)>,
) -> (Array2<F>, Option<BnCache<F>>) {
    let gamma = &params.get(&format!("{prefix}.scale")).data;
    let beta = &params.get(&format!("{prefix}.shift")).data;
    if training {
        let (y, cache, mean, var) = layers::bn_forward_train(x, gamma, beta);
        updates.push((format!("{prefix}.mean"), mean));
        updates.push((format!("{prefix}.var"), var));
        (y, Some(cache))
    } else {
        let mean = &params.get(&format!("{prefix}.mean")).data;
        let var = &params.get(&format!("{prefix}.var")).data;
        (layers::bn_forward_eval(x, gamma, beta, mean, var), None)
    }
}

/// Fold batch statistics from a training forward pass into the running
/// statistics (`running = (1 - m) * running + m * batch`).
pub fn apply_running_updates<F: Real>(params: &mut ParamSet<F>, updates: &[(String, Vec<F>)]) {
    let m = F::lit(layers::BN_MOMENTUM);
    for (n, vals) in updates {
        let t = params.get_mut(n);
        for (r, &v) in t.data.iter_mut().zip(vals) {
            *r = (F::one() - m) * *r + m * v;
        }
    }
}

/// Backpropagate `d_recon` (gradient of the loss w.r.t. the channel-major
/// reconstruction) through a training-mode trace.
pub fn backward<F: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<F>,
    trace: &MtsaeTrace<F>,
    d_recon: &Array2<F>,
) -> Result<ParamSet<F>> {
    if trace.caches.len() != cfg.n_modules {
        return Err(Error::invalid(
            "backward needs a training-mode forward trace".to_string(),
        ));
    }
    if d_recon.dim() != trace.reconstruction.dim() {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match reconstruction {:?}",
            d_recon.dim(),
            trace.reconstruction.dim()
        )));
    }
    let len = trace.len;
    let mut grads = params.zeros_like_trainable();
    let n = cfg.n_modules;
    let last = &trace.hidden[n];

    let dk = layers::matmul(d_recon.view(), last.t());
    grads.get_mut("decoder.kernel").data.copy_from_slice(dk.as_slice().unwrap());
    grads
        .get_mut("decoder.bias")
        .data
        .copy_from_slice(&layers::bias_grad(d_recon));

    let mut dh: Vec<Option<Array2<F>>> = (0..=n).map(|_| None).collect();
    dh[n] = Some(layers::matmul(
        params.get("decoder.kernel").as_matrix().t(),
        d_recon.view(),
    ));

    let nf = cfg.branch_filters;
    for d in (0..n).rev() {
        let cache = &trace.caches[d];
        let Some(mut dpre) = dh[d + 1].take() else {
            continue;
        };
        layers::relu_backward_inplace(&mut dpre, &trace.hidden[d + 1]);
        // the network input needs no gradient
        let need_dx = d > 0;
        let x = &trace.hidden[d];
        let c_in = x.nrows();

        if has_residual(d) {
            let sbn = cache.shortcut_bn.as_ref().expect("shortcut cache");
            let gamma = &params.get(&name(d, "shortcut_bn.scale")).data;
            let (ds, dg, db) = layers::bn_backward(&dpre, sbn, gamma);
            set(&mut grads, &name(d, "shortcut_bn.scale"), &dg);
            set(&mut grads, &name(d, "shortcut_bn.shift"), &db);
            let src = &trace.hidden[d - 2];
            let w = params.get(&name(d, "shortcut.kernel"));
            let dw = layers::matmul(ds.view(), src.t());
            set(&mut grads, &name(d, "shortcut.kernel"), dw.as_slice().unwrap());
            if d - 2 > 0 {
                let dsrc = layers::matmul(w.as_matrix().t(), ds.view());
                add_some(&mut dh[d - 2], dsrc);
            }
        }

        let gamma = &params.get(&name(d, "bn.scale")).data;
        let (dconcat, dg, db) = layers::bn_backward(&dpre, &cache.bn, gamma);
        set(&mut grads, &name(d, "bn.scale"), &dg);
        set(&mut grads, &name(d, "bn.shift"), &db);

        let conv_in = if cache.bottleneck_in { cfg.bottleneck } else { c_in };
        let mut dz: Option<Array2<F>> = None;
        for (j, &k) in cfg.kernel_sizes.iter().enumerate() {
            let wname = name(d, &format!("branch{j}.kernel"));
            let w = params.get(&wname);
            let dy = dconcat.slice(s![j * nf..(j + 1) * nf, ..]).to_owned();
            let need = cache.bottleneck_in || need_dx;
            let (dw, dzj) =
                layers::conv_backward(w.as_matrix(), &cache.branch_inputs[j], &dy, conv_in, len, k, need);
            set(&mut grads, &wname, dw.as_slice().unwrap());
            if let Some(g) = dzj {
                match dz.as_mut() {
                    Some(acc) => *acc += &g,
                    None => dz = Some(g),
                }
            }
        }

        let mut dx: Option<Array2<F>> = None;
        {
            let wname = name(d, "branch3.kernel");
            let w = params.get(&wname);
            let dy = dconcat.slice(s![3 * nf..4 * nf, ..]).to_owned();
            let (dw, dp) = layers::conv_backward(w.as_matrix(), &cache.pool_out, &dy, c_in, len, 1, need_dx);
            set(&mut grads, &wname, dw.as_slice().unwrap());
            if let Some(dp) = dp {
                dx = Some(layers::maxpool3_backward(&dp, &cache.pool_arg, len));
            }
        }

        if cache.bottleneck_in {
            let dz = dz.expect("bottleneck gradient");
            let wname = name(d, "bottleneck.kernel");
            let dw = layers::matmul(dz.view(), x.t());
            set(&mut grads, &wname, dw.as_slice().unwrap());
            if need_dx {
                let g = layers::matmul(params.get(&wname).as_matrix().t(), dz.view());
                add_some(&mut dx, g);
            }
        } else if need_dx {
            if let Some(g) = dz {
                add_some(&mut dx, g);
            }
        }

        if d > 0 {
            if let Some(g) = dx {
                add_some(&mut dh[d], g);
            }
        }
    }
    Ok(grads)
}

fn set<F: Real>(grads: &mut ParamSet<F>, n: &str, vals: &[F]) {
    let t = grads.get_mut(n);
    for (a, &v) in t.data.iter_mut().zip(vals) {
        *a += v;
    }
}

fn add_some<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot.as_mut() {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}


/// Mean over the time axis of a `(batch, c, len)` activation.
pub fn mean_pool<F: Real>(act: &Array3<F>) -> Array2<F> {
    act.mean_axis(Axis(2)).expect("non-empty time axis")
}
