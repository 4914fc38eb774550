//! Deep convolutional autoencoder baseline.
//!
//! Encoder: three `conv(k=5) + bias + ReLU + maxpool(2)` stages, flattened
//! into a dense 60-unit linear bottleneck. Decoder mirrors it: dense + ReLU,
//! then three `upsample(2) + conv(k=5)` stages, ReLU on all but the last.
//!
//! Tensor names: `enc{i}.{kernel,bias}`, `bottleneck.{kernel,bias}`,
//! `expand.{kernel,bias}`, `dec{i}.{kernel,bias}`.

use ndarray::{Array2, Array3};

use super::layers::{self, ConvInput};
use super::params::{ParamSet, Tensor};
use super::real::Real;
use super::ModelConfig;
use crate::{Error, Result};

pub const BOTTLENECK: usize = 60;
pub const POOL_FACTOR: usize = 8;
pub const KERNEL: usize = 5;
const ENC_CHANNELS: [usize; 3] = [32, 32, 16];
const DEC_CHANNELS: [usize; 2] = [32, 32];

/// Rejects lengths the pooling stages cannot halve three times.
pub fn check_window(len: usize) -> Result<()> {
    if len == 0 || len % POOL_FACTOR != 0 {
        let next = len.div_ceil(POOL_FACTOR).max(1) * POOL_FACTOR;
        return Err(Error::invalid(format!(
            "window length {len} is not divisible by {POOL_FACTOR}; pad it to w={next}"
        )));
    }
    Ok(())
}

/// Smallest multiple of the pooling factor that holds `len`.
pub fn padded_len(len: usize) -> usize {
    len.div_ceil(POOL_FACTOR) * POOL_FACTOR
}

fn conv_in(stage: usize, vars: usize) -> usize {
    if stage == 0 {
        vars
    } else {
        ENC_CHANNELS[stage - 1]
    }
}

fn dec_io(stage: usize, vars: usize) -> (usize, usize) {
    let c_in = if stage == 0 {
        ENC_CHANNELS[2]
    } else {
        DEC_CHANNELS[stage - 1]
    };
    let c_out = if stage == 2 { vars } else { DEC_CHANNELS[stage] };
    (c_in, c_out)
}

/// Weights for windows of length `window`; the dense layers fix it.
pub fn init<F: Real>(cfg: &ModelConfig, window: usize, rng: &mut crate::Rng) -> Result<ParamSet<F>> {
    cfg.validate()?;
    check_window(window)?;
    let v = cfg.in_vars;
    let flat = ENC_CHANNELS[2] * window / POOL_FACTOR;
    let mut p = ParamSet::new();
    for (i, &c_out) in ENC_CHANNELS.iter().enumerate() {
        p.insert(
            format!("enc{i}.kernel"),
            Tensor::glorot(&[c_out, conv_in(i, v), KERNEL], rng),
        );
        p.insert(format!("enc{i}.bias"), Tensor::zeros(&[c_out]));
    }
    p.insert("bottleneck.kernel", Tensor::glorot(&[BOTTLENECK, flat], rng));
    p.insert("bottleneck.bias", Tensor::zeros(&[BOTTLENECK]));
    p.insert("expand.kernel", Tensor::glorot(&[flat, BOTTLENECK], rng));
    p.insert("expand.bias", Tensor::zeros(&[flat]));
    for i in 0..3 {
        let (c_in, c_out) = dec_io(i, v);
        p.insert(
            format!("dec{i}.kernel"),
            Tensor::glorot(&[c_out, c_in, KERNEL], rng),
        );
        p.insert(format!("dec{i}.bias"), Tensor::zeros(&[c_out]));
    }
    Ok(p)
}

/// Window length the weights were built for.
pub fn window_of<F: Real>(params: &ParamSet<F>) -> usize {
    params.get("bottleneck.kernel").shape[1] / ENC_CHANNELS[2] * POOL_FACTOR
}

pub struct DcaeTrace<F> {
    pub batch: usize,
    pub len: usize,
    /// Channel-major reconstruction `(v, batch * len)`.
    pub reconstruction: Array2<F>,
    /// Bottleneck activations `(60, batch)`.
    pub code: Array2<F>,
    enc_inputs: Vec<ConvInput<F>>,
    enc_relu: Vec<Array2<F>>,
    pool_args: Vec<Vec<u8>>,
    flat: Array2<F>,
    expanded: Array2<F>,
    dec_inputs: Vec<ConvInput<F>>,
    dec_relu: Vec<Array2<F>>,
}

impl<F: Real> DcaeTrace<F> {
    pub fn reconstruction_3d(&self) -> Array3<F> {
        layers::from_channel_major(&self.reconstruction, self.len)
    }

    /// Latent codes, `(batch, 60)`.
    pub fn embedding(&self) -> Array2<F> {
        self.code.t().to_owned()
    }
}

fn affine<F: Real>(params: &ParamSet<F>, prefix: &str, input: &ConvInput<F>) -> Array2<F> {
    let mut y = layers::conv_forward(params.get(&format!("{prefix}.kernel")).as_matrix(), input);
    layers::add_bias(&mut y, &params.get(&format!("{prefix}.bias")).data);
    y
}

pub fn forward<F: Real>(params: &ParamSet<F>, batch: &Array3<F>) -> Result<DcaeTrace<F>> {
    let (b, v, len) = batch.dim();
    check_window(len)?;
    let expected = window_of(params);
    if len != expected {
        return Err(Error::shape(format!(
            "model was built for windows of length {expected}, batch has {len}"
        )));
    }
    let vars = params.get("enc0.kernel").shape[1];
    if v != vars {
        return Err(Error::shape(format!(
            "model expects {vars} input variables, batch has {v}"
        )));
    }

    let mut x = layers::to_channel_major(batch);
    let mut enc_inputs = Vec::new();
    let mut enc_relu = Vec::new();
    let mut pool_args = Vec::new();
    let mut l = len;
    for i in 0..3 {
        let input = ConvInput::prepare(x, l, KERNEL);
        let mut y = affine(params, &format!("enc{i}"), &input);
        layers::relu_inplace(&mut y);
        let (pooled, arg) = layers::maxpool2_forward(&y, l);
        enc_inputs.push(input);
        enc_relu.push(y);
        pool_args.push(arg);
        x = pooled;
        l /= 2;
    }
    let flat = layers::flatten(&x, l);
    let code = affine(params, "bottleneck", &ConvInput::Pointwise(flat.clone()));
    let mut expanded = affine(params, "expand", &ConvInput::Pointwise(code.clone()));
    layers::relu_inplace(&mut expanded);

    let mut x = layers::unflatten(&expanded, ENC_CHANNELS[2], l);
    let mut dec_inputs = Vec::new();
    let mut dec_relu = Vec::new();
    for i in 0..3 {
        let up = layers::upsample2_forward(&x, l);
        l *= 2;
        let input = ConvInput::prepare(up, l, KERNEL);
        let mut y = affine(params, &format!("dec{i}"), &input);
        if i < 2 {
            layers::relu_inplace(&mut y);
            dec_relu.push(y.clone());
        }
        dec_inputs.push(input);
        x = y;
    }

    Ok(DcaeTrace {
        batch: b,
        len,
        reconstruction: x,
        code,
        enc_inputs,
        enc_relu,
        pool_args,
        flat,
        expanded,
        dec_inputs,
        dec_relu,
    })
}

fn store<F: Real>(grads: &mut ParamSet<F>, prefix: &str, dw: Array2<F>, dy: &Array2<F>) {
    let kernel = grads.get_mut(&format!("{prefix}.kernel"));
    kernel.data.copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
    grads
        .get_mut(&format!("{prefix}.bias"))
        .data
        .copy_from_slice(&layers::bias_grad(dy));
}

/// Backpropagate the channel-major reconstruction gradient.
pub fn backward<F: Real>(
    params: &ParamSet<F>,
    trace: &DcaeTrace<F>,
    d_recon: &Array2<F>,
) -> Result<ParamSet<F>> {
    if d_recon.dim() != trace.reconstruction.dim() {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match reconstruction {:?}",
            d_recon.dim(),
            trace.reconstruction.dim()
        )));
    }
    let vars = params.get("enc0.kernel").shape[1];
    let mut grads = params.zeros_like_trainable();
    let mut dy = d_recon.clone();
    let mut l = trace.len;
    for i in (0..3).rev() {
        if i < 2 {
            layers::relu_backward_inplace(&mut dy, &trace.dec_relu[i]);
        }
        let (c_in, _) = dec_io(i, vars);
        let prefix = format!("dec{i}");
        let w = params.get(&format!("{prefix}.kernel"));
        let (dw, dx) =
            layers::conv_backward(w.as_matrix(), &trace.dec_inputs[i], &dy, c_in, l, KERNEL, true);
        store(&mut grads, &prefix, dw, &dy);
        l /= 2;
        dy = layers::upsample2_backward(&dx.expect("requested"), l);
    }

    let mut d_exp = layers::flatten(&dy, l);
    layers::relu_backward_inplace(&mut d_exp, &trace.expanded);
    let w = params.get("expand.kernel");
    let code_in = ConvInput::Pointwise(trace.code.clone());
    let (dw, dcode) = layers::conv_backward(w.as_matrix(), &code_in, &d_exp, BOTTLENECK, 1, 1, true);
    store(&mut grads, "expand", dw, &d_exp);
    let dcode = dcode.expect("requested");

    let w = params.get("bottleneck.kernel");
    let flat_in = ConvInput::Pointwise(trace.flat.clone());
    let (dw, dflat) =
        layers::conv_backward(w.as_matrix(), &flat_in, &dcode, trace.flat.nrows(), 1, 1, true);
    store(&mut grads, "bottleneck", dw, &dcode);
    let mut dy = layers::unflatten(&dflat.expect("requested"), ENC_CHANNELS[2], l);

    for i in (0..3).rev() {
        let full = l * 2;
        let mut da = layers::maxpool2_backward(&dy, &trace.pool_args[i], full);
        layers::relu_backward_inplace(&mut da, &trace.enc_relu[i]);
        let prefix = format!("enc{i}");
        let w = params.get(&format!("{prefix}.kernel"));
        let (dw, dx) = layers::conv_backward(
            w.as_matrix(),
            &trace.enc_inputs[i],
            &da,
            conv_in(i, vars),
            full,
            KERNEL,
            i > 0,
        );
        store(&mut grads, &prefix, dw, &da);
        if let Some(dx) = dx {
            dy = dx;
        }
        l = full;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::adam::{Adam, AdamConfig};
    use crate::model::gradcheck::{check_gradients, test_batch};
    use crate::model::loss::{masked_mse, masked_mse_grad, Reduction};

    fn mse(params: &ParamSet<f64>, x: &Array3<f64>) -> f64 {
        let t = forward(params, x).unwrap();
        let target = layers::to_channel_major(x);
        let all = Array2::<f64>::zeros(target.dim());
        masked_mse(t.reconstruction.view(), target.view(), all.view(), Reduction::Mean)
            .unwrap()
            .value
    }

    #[test]
    fn shapes() {
        let cfg = ModelConfig::dcae(3);
        let p = init::<f32>(&cfg, 32, &mut crate::seeded_rng(0)).unwrap();
        let x = test_batch(8, 3, 32, 1).mapv(|v| v as f32);
        let t = forward(&p, &x).unwrap();
        assert_eq!(t.embedding().dim(), (8, 60));
        assert_eq!(t.reconstruction_3d().dim(), (8, 3, 32));
    }

    #[test]
    fn rejects_window_not_divisible_by_eight() {
        let err = check_window(30).unwrap_err().to_string();
        assert!(err.contains("w=32"), "{err}");
        assert!(init::<f32>(&ModelConfig::dcae(3), 30, &mut crate::seeded_rng(0)).is_err());
        assert_eq!(padded_len(30), 32);
        assert_eq!(padded_len(32), 32);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ModelConfig::dcae(2);
        let p = init::<f64>(&cfg, 8, &mut crate::seeded_rng(4)).unwrap();
        let x = test_batch(2, 2, 8, 9);
        let t = forward(&p, &x).unwrap();
        let target = layers::to_channel_major(&x);
        let n = target.len() as f64;
        let d = (&t.reconstruction - &target).mapv(|v| 2.0 * v / n);
        let g = backward(&p, &t, &d).unwrap();
        for c in check_gradients(&p, &g, 1e-5, |q| mse(q, &x)) {
            assert!(c.rel_error < 1e-4, "{} {:e}", c.name, c.rel_error);
        }
    }

    #[test]
    fn overfits_constant_batch() {
        let cfg = ModelConfig::dcae(1);
        let mut p = init::<f32>(&cfg, 32, &mut crate::seeded_rng(2)).unwrap();
        let x = Array3::<f32>::from_elem((4, 1, 32), 0.7);
        let target = layers::to_channel_major(&x);
        let all = Array2::<f32>::zeros(target.dim());
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let t = forward(&p, &x).unwrap();
            last = masked_mse(t.reconstruction.view(), target.view(), all.view(), Reduction::Mean)
                .unwrap()
                .value;
            let d = masked_mse_grad(t.reconstruction.view(), target.view(), all.view()).unwrap();
            let g = backward(&p, &t, &d).unwrap();
            opt.update(&mut p, &g);
        }
        assert!(last < 1e-2, "final mse {last}");
    }
}
