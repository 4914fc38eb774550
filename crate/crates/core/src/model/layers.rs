//! Layer primitives on channel-major activations.
//!
//! Activations are `(channels, batch * len)` matrices: column `b * len + t`
//! holds time step `t` of batch element `b`. Convolutions use "same" zero
//! padding (odd kernels, centred), so the time length never changes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::real::Real;
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `a · b`.
pub fn matmul<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    a.dot(&b)
}

fn standard<F: Real>(x: &Array2<F>) -> &[F] {
    x.as_slice()
        .expect("activations are kept in standard (row-major) layout")
}

/// Unfold `x` into the `(channels * k, batch * len)` column matrix of a
/// same-padded width-`k` convolution. Row `c * k + j` holds channel `c`
/// shifted by `j - (k - 1) / 2`.
pub fn im2col<F: Real>(x: &Array2<F>, len: usize, k: usize) -> Array2<F> {
    let (c, bt) = x.dim();
    debug_assert_eq!(bt % len, 0);
    let batch = bt / len;
    let pad = (k - 1) / 2;
    let xs = standard(x);
    let mut col = vec![F::zero(); c * k * bt];
    par::for_each_chunk_mut(&mut col, bt, |row, out| {
        let ci = row / k;
        let shift = (row % k) as isize - pad as isize;
        let src = &xs[ci * bt..(ci + 1) * bt];
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        if lo >= hi {
            return;
        }
        for b in 0..batch {
            let o = &mut out[b * len..(b + 1) * len];
            let s = &src[b * len..(b + 1) * len];
            let from = (lo as isize + shift) as usize;
            o[lo..hi].copy_from_slice(&s[from..from + (hi - lo)]);
        }
    });
    Array2::from_shape_vec((c * k, bt), col).expect("im2col shape")
}

/// Adjoint of [`im2col`]: fold column gradients back onto the input.
pub fn col2im<F: Real>(dcol: &Array2<F>, channels: usize, len: usize, k: usize) -> Array2<F> {
    let (rows, bt) = dcol.dim();
    debug_assert_eq!(rows, channels * k);
    let batch = bt / len;
    let pad = (k - 1) / 2;
    let ds = standard(dcol);
    let mut dx = vec![F::zero(); channels * bt];
    par::for_each_chunk_mut(&mut dx, bt, |ci, out| {
        for j in 0..k {
            let shift = j as isize - pad as isize;
            let src = &ds[(ci * k + j) * bt..(ci * k + j + 1) * bt];
            let lo = (-shift).max(0) as usize;
            let hi = (len as isize - shift).min(len as isize).max(0) as usize;
            if lo >= hi {
                continue;
            }
            for b in 0..batch {
                let g = &src[b * len..(b + 1) * len];
                let o = &mut out[b * len..(b + 1) * len];
                let from = (lo as isize + shift) as usize;
                for (t, gv) in (lo..hi).zip(g[lo..hi].iter()) {
                    o[t - lo + from] += *gv;
                }
            }
        }
    });
    Array2::from_shape_vec((channels, bt), dx).expect("col2im shape")
}

/// Input of a convolution as the GEMM sees it: the raw activation for 1x1
/// kernels, the unfolded column matrix otherwise.
pub enum ConvInput<F> {
    Pointwise(Array2<F>),
    Unfolded(Array2<F>),
}

impl<F: Real> ConvInput<F> {
    pub fn prepare(x: Array2<F>, len: usize, k: usize) -> Self {
        if k == 1 {
            ConvInput::Pointwise(x)
        } else {
            let col = im2col(&x, len, k);
            ConvInput::Unfolded(col)
        }
    }

    pub fn matrix(&self) -> &Array2<F> {
        match self {
            ConvInput::Pointwise(x) | ConvInput::Unfolded(x) => x,
        }
    }
}

/// Same-padded convolution without bias. `w` is `(c_out, c_in * k)`.
pub fn conv_forward<F: Real>(w: ArrayView2<'_, F>, input: &ConvInput<F>) -> Array2<F> {
    matmul(w, input.matrix().view())
}

/// Gradients of [`conv_forward`]; `dx` only when requested.
pub fn conv_backward<F: Real>(
    w: ArrayView2<'_, F>,
    input: &ConvInput<F>,
    dy: &Array2<F>,
    c_in: usize,
    len: usize,
    k: usize,
    need_dx: bool,
) -> (Array2<F>, Option<Array2<F>>) {
    let dw = matmul(dy.view(), input.matrix().t());
    let dx = need_dx.then(|| {
        let dcol = matmul(w.t(), dy.view());
        if k == 1 {
            dcol
        } else {
            col2im(&dcol, c_in, len, k)
        }
    });
    (dw, dx)
}

/// Per-channel statistics kept for the batch-norm backward pass.
pub struct BnCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Batch-norm with batch statistics. Returns the output, the backward cache,
/// and the batch mean / unbiased variance for the running-stat update.
pub fn bn_forward_train<F: Real>(
    x: &Array2<F>,
    gamma: &[F],
    beta: &[F],
) -> (Array2<F>, BnCache<F>, Vec<F>, Vec<F>) {
    let (c, n) = x.dim();
    let nf = F::lit(n as f64);
    let eps = F::lit(BN_EPS);
    let mut xhat = x.clone();
    let mut y = Array2::<F>::zeros((c, n));
    let stats: Vec<(F, F)> = par::map_range(c, |ci| {
        let row = x.row(ci);
        let mean = row.iter().copied().sum::<F>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
        (mean, var)
    });
    let mut inv_std = Array1::<F>::zeros(c);
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for (ci, &(mean, var)) in stats.iter().enumerate() {
        let is = F::one() / (var + eps).sqrt();
        inv_std[ci] = is;
        let mut xr = xhat.row_mut(ci);
        let mut yr = y.row_mut(ci);
        for (xv, yv) in xr.iter_mut().zip(yr.iter_mut()) {
            *xv = (*xv - mean) * is;
            *yv = *xv * gamma[ci] + beta[ci];
        }
        means.push(mean);
        let unbiased = if n > 1 {
            var * nf / F::lit((n - 1) as f64)
        } else {
            var
        };
        vars.push(unbiased);
    }
    (y, BnCache { xhat, inv_std }, means, vars)
}

/// Batch-norm with stored running statistics.
pub fn bn_forward_eval<F: Real>(
    x: &Array2<F>,
    gamma: &[F],
    beta: &[F],
    mean: &[F],
    var: &[F],
) -> Array2<F> {
    let eps = F::lit(BN_EPS);
    let mut y = x.clone();
    for (ci, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let scale = gamma[ci] / (var[ci] + eps).sqrt();
        let shift = beta[ci] - mean[ci] * scale;
        row.mapv_inplace(|v| v * scale + shift);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<F: Real>(
    dy: &Array2<F>,
    cache: &BnCache<F>,
    gamma: &[F],
) -> (Array2<F>, Vec<F>, Vec<F>) {
    let (c, n) = dy.dim();
    let nf = F::lit(n as f64);
    let mut dx = Array2::<F>::zeros((c, n));
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ci in 0..c {
        let dyr = dy.row(ci);
        let xr = cache.xhat.row(ci);
        let sum_dy: F = dyr.iter().copied().sum();
        let sum_dy_x: F = dyr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum();
        dgamma[ci] = sum_dy_x;
        dbeta[ci] = sum_dy;
        let k = gamma[ci] * cache.inv_std[ci] / nf;
        let mut dxr = dx.row_mut(ci);
        for ((d, &g), &xh) in dxr.iter_mut().zip(dyr.iter()).zip(xr.iter()) {
            *d = k * (nf * g - sum_dy - xh * sum_dy_x);
        }
    }
    (dx, dgamma, dbeta)
}

/// Width-3, stride-1 max pooling with same padding (padding never wins).
/// The second output records the winning offset (0, 1, 2 for t-1, t, t+1).
pub fn maxpool3_forward<F: Real>(x: &Array2<F>, len: usize) -> (Array2<F>, Vec<u8>) {
    let (c, bt) = x.dim();
    let xs = standard(x);
    let mut out = vec![F::zero(); c * bt];
    let mut arg = vec![0u8; c * bt];
    for row in 0..c {
        for b in 0..bt / len {
            let base = row * bt + b * len;
            let s = &xs[base..base + len];
            for t in 0..len {
                let mut best = s[t];
                let mut which = 1u8;
                if t > 0 && s[t - 1] >= best {
                    best = s[t - 1];
                    which = 0;
                    if s[t] > best {
                        best = s[t];
                        which = 1;
                    }
                }
                if t + 1 < len && s[t + 1] > best {
                    best = s[t + 1];
                    which = 2;
                }
                out[base + t] = best;
                arg[base + t] = which;
            }
        }
    }
    (
        Array2::from_shape_vec((c, bt), out).expect("maxpool shape"),
        arg,
    )
}

pub fn maxpool3_backward<F: Real>(dy: &Array2<F>, arg: &[u8], len: usize) -> Array2<F> {
    let (c, bt) = dy.dim();
    let ds = standard(dy);
    let mut dx = vec![F::zero(); c * bt];
    for row in 0..c {
        for b in 0..bt / len {
            let base = row * bt + b * len;
            for t in 0..len {
                let src = base + t + arg[base + t] as usize - 1;
                dx[src] += ds[base + t];
            }
        }
    }
    Array2::from_shape_vec((c, bt), dx).expect("maxpool shape")
}

pub fn relu_inplace<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<F: Real>(dy: &mut Array2<F>, out: &Array2<F>) {
    ndarray::Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
}

/// Add a per-channel bias.
pub fn add_bias<F: Real>(y: &mut Array2<F>, bias: &[F]) {
    for (ci, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let b = bias[ci];
        row.mapv_inplace(|v| v + b);
    }
}

pub fn bias_grad<F: Real>(dy: &Array2<F>) -> Vec<F> {
    dy.axis_iter(Axis(0))
        .map(|r| r.iter().copied().sum())
        .collect()
}

/// Non-overlapping width-2 max pooling (halves the time length).
pub fn maxpool2_forward<F: Real>(x: &Array2<F>, len: usize) -> (Array2<F>, Vec<u8>) {
    let (c, bt) = x.dim();
    let batch = bt / len;
    let half = len / 2;
    let mut out = Array2::<F>::zeros((c, batch * half));
    let mut arg = vec![0u8; c * batch * half];
    for ci in 0..c {
        for b in 0..batch {
            for t in 0..half {
                let a = x[[ci, b * len + 2 * t]];
                let bv = x[[ci, b * len + 2 * t + 1]];
                let idx = ci * batch * half + b * half + t;
                if bv > a {
                    out[[ci, b * half + t]] = bv;
                    arg[idx] = 1;
                } else {
                    out[[ci, b * half + t]] = a;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Real>(dy: &Array2<F>, arg: &[u8], len: usize) -> Array2<F> {
    let (c, bth) = dy.dim();
    let half = len / 2;
    let batch = bth / half;
    let mut dx = Array2::<F>::zeros((c, batch * len));
    for ci in 0..c {
        for b in 0..batch {
            for t in 0..half {
                let idx = ci * batch * half + b * half + t;
                let src = b * len + 2 * t + arg[idx] as usize;
                dx[[ci, src]] += dy[[ci, b * half + t]];
            }
        }
    }
    dx
}

/// Nearest-neighbour upsampling by 2 along time.
pub fn upsample2_forward<F: Real>(x: &Array2<F>, len: usize) -> Array2<F> {
    let (c, bt) = x.dim();
    let batch = bt / len;
    let mut out = Array2::<F>::zeros((c, bt * 2));
    for ci in 0..c {
        for b in 0..batch {
            for t in 0..len {
                let v = x[[ci, b * len + t]];
                out[[ci, b * 2 * len + 2 * t]] = v;
                out[[ci, b * 2 * len + 2 * t + 1]] = v;
            }
        }
    }
    out
}

/// `len` is the (short) input length of the forward pass.
pub fn upsample2_backward<F: Real>(dy: &Array2<F>, len: usize) -> Array2<F> {
    let (c, bt2) = dy.dim();
    let batch = bt2 / (2 * len);
    let mut dx = Array2::<F>::zeros((c, batch * len));
    for ci in 0..c {
        for b in 0..batch {
            for t in 0..len {
                dx[[ci, b * len + t]] =
                    dy[[ci, b * 2 * len + 2 * t]] + dy[[ci, b * 2 * len + 2 * t + 1]];
            }
        }
    }
    dx
}

/// `(c, batch * len)` → `(c * len, batch)`, one flattened sample per column.
pub fn flatten<F: Real>(x: &Array2<F>, len: usize) -> Array2<F> {
    let (c, bt) = x.dim();
    let batch = bt / len;
    let mut out = Array2::<F>::zeros((c * len, batch));
    for ci in 0..c {
        for b in 0..batch {
            out.slice_mut(s![ci * len..(ci + 1) * len, b])
                .assign(&x.slice(s![ci, b * len..(b + 1) * len]));
        }
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten<F: Real>(x: &Array2<F>, channels: usize, len: usize) -> Array2<F> {
    let (_, batch) = x.dim();
    let mut out = Array2::<F>::zeros((channels, batch * len));
    for ci in 0..channels {
        for b in 0..batch {
            out.slice_mut(s![ci, b * len..(b + 1) * len])
                .assign(&x.slice(s![ci * len..(ci + 1) * len, b]));
        }
    }
    out
}

/// `(batch, channels, len)` → channel-major `(channels, batch * len)`.
pub fn to_channel_major<F: Real>(x: &ndarray::Array3<F>) -> Array2<F> {
    let (b, c, l) = x.dim();
    let mut out = Array2::<F>::zeros((c, b * l));
    for bi in 0..b {
        for ci in 0..c {
            out.slice_mut(s![ci, bi * l..(bi + 1) * l])
                .assign(&x.slice(s![bi, ci, ..]));
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub fn from_channel_major<F: Real>(x: &Array2<F>, len: usize) -> ndarray::Array3<F> {
    let (c, bt) = x.dim();
    let b = bt / len;
    let mut out = ndarray::Array3::<F>::zeros((b, c, len));
    for bi in 0..b {
        for ci in 0..c {
            out.slice_mut(s![bi, ci, ..])
                .assign(&x.slice(s![ci, bi * len..(bi + 1) * len]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_conv(x: &Array2<f64>, w: &ndarray::Array3<f64>, len: usize) -> Array2<f64> {
        let (c_out, c_in, k) = w.dim();
        let pad = (k - 1) as isize / 2;
        let batch = x.ncols() / len;
        let mut y = Array2::zeros((c_out, x.ncols()));
        for o in 0..c_out {
            for b in 0..batch {
                for t in 0..len {
                    let mut acc = 0.0;
                    for i in 0..c_in {
                        for j in 0..k {
                            let src = t as isize + j as isize - pad;
                            if src >= 0 && (src as usize) < len {
                                acc += w[[o, i, j]] * x[[i, b * len + src as usize]];
                            }
                        }
                    }
                    y[[o, b * len + t]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_convolution() {
        let len = 5;
        let x = Array2::from_shape_fn((2, 2 * len), |(c, j)| (c * 10 + j) as f64 * 0.1 - 0.7);
        let w = ndarray::Array3::from_shape_fn((3, 2, 7), |(o, i, j)| {
            ((o * 14 + i * 7 + j) as f64).sin()
        });
        let w2 = w.clone().into_shape_with_order((3, 14)).unwrap();
        let input = ConvInput::prepare(x.clone(), len, 7);
        let y = conv_forward(w2.view(), &input);
        let expected = naive_conv(&x, &w, len);
        for (a, b) in y.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)>
        let len = 6;
        let k = 5;
        let x = Array2::from_shape_fn((3, 2 * len), |(c, j)| ((c * 7 + j) as f64).cos());
        let g = Array2::from_shape_fn((3 * k, 2 * len), |(r, j)| ((r * 3 + j) as f64 * 0.3).sin());
        let lhs: f64 = (&im2col(&x, len, k) * &g).sum();
        let rhs: f64 = (&x * &col2im(&g, 3, len, k)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool3_keeps_same_length_and_routes_gradient() {
        let x = array![[1.0, 3.0, 2.0, 0.0]];
        let (y, arg) = maxpool3_forward(&x, 4);
        assert_eq!(y, array![[3.0, 3.0, 3.0, 2.0]]);
        let dx = maxpool3_backward(&Array2::<f64>::ones((1, 4)), &arg, 4);
        assert_eq!(dx, array![[0.0, 3.0, 1.0, 0.0]]);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 10.0]];
        let (y, _, mean, var) = bn_forward_train(&x, &[1.0, 1.0], &[0.0, 0.5]);
        assert!((mean[0] - 2.5).abs() < 1e-12);
        assert!((var[0] - 5.0 / 3.0).abs() < 1e-12);
        assert!(y.row(0).sum().abs() < 1e-12);
        assert!(y.row(1).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn channel_major_round_trip() {
        let x = ndarray::Array3::from_shape_fn((2, 3, 4), |(a, b, c)| (a * 100 + b * 10 + c) as f32);
        let cm = to_channel_major(&x);
        assert_eq!(cm[[1, 4 + 2]], 112.0);
        assert_eq!(from_channel_major(&cm, 4), x);
    }

    #[test]
    fn flatten_round_trip() {
        let x = Array2::from_shape_fn((3, 8), |(c, j)| (c * 8 + j) as f32);
        assert_eq!(unflatten(&flatten(&x, 4), 3, 4), x);
    }
}
