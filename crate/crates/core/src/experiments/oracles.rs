//! Synthetic inputs with known geometry for checking projections.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

/// Two Gaussian clusters of `n_each` points in `dim` dimensions whose
/// centres are `separation` standard deviations apart, with labels.
pub fn two_clusters(n_each: usize, dim: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = crate::seeded_rng(seed);
    let mut x = Array2::<f64>::zeros((2 * n_each, dim));
    let mut labels = Vec::with_capacity(2 * n_each);
    for i in 0..2 * n_each {
        let c = i / n_each;
        for j in 0..dim {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[[i, j]] = e + if j == 0 && c == 1 { separation } else { 0.0 };
        }
        labels.push(c);
    }
    (x, labels)
}

/// `n` points evenly spaced on a unit circle, placed on a random 2-plane of
/// `dim`-dimensional space.
pub fn circle(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = crate::seeded_rng(seed);
    let g = DMatrix::<f64>::from_fn(dim, 2, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    Array2::from_shape_fn((n, dim), |(i, j)| {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        a.cos() * q[(j, 0)] + a.sin() * q[(j, 1)]
    })
}

/// Share of points whose two nearest neighbours in `y` are their two
/// neighbours along the cycle `0, 1, ..., n-1, 0`.
pub fn cyclic_neighbor_fraction(y: ArrayView2<'_, f64>) -> f64 {
    let n = y.nrows();
    let d = |i: usize, j: usize| (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
    let ok = (0..n)
        .filter(|&i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| d(i, a).total_cmp(&d(i, b)));
            let mut nn = [others[0], others[1]];
            nn.sort_unstable();
            let mut want = [(i + 1) % n, (i + n - 1) % n];
            want.sort_unstable();
            nn == want
        })
        .count();
    ok as f64 / n as f64
}

/// Frobenius residual between `x` and the best rigid (rotation or
/// reflection plus translation) alignment of `y` onto it.
pub fn procrustes_residual(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let n = x.nrows();
    let center = |m: ArrayView2<'_, f64>| {
        let mean = m.mean_axis(ndarray::Axis(0)).expect("non-empty");
        DMatrix::from_fn(n, m.ncols(), |i, j| m[[i, j]] - mean[j])
    };
    let (a, b) = (center(x), center(y));
    let svd = (b.transpose() * &a).svd(true, true);
    let r = svd.u.expect("u") * svd.v_t.expect("v_t");
    (b * r - a).norm()
}

/// `n` points on a plane embedded in `dim` dimensions, with their planar
/// coordinates.
pub fn planar(n: usize, dim: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = crate::seeded_rng(seed);
    let p = Array2::from_shape_simple_fn((n, 2), || {
        let e: f64 = StandardNormal.sample(&mut rng);
        3.0 * e
    });
    let g = DMatrix::<f64>::from_fn(dim, 2, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| p[[i, 0]] * q[(j, 0)] + p[[i, 1]] * q[(j, 1)] + 1.5);
    (x, p)
}
