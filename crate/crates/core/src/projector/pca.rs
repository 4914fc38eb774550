use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::fix_signs;
use crate::{Error, Result};

/// Principal components of the rows of a matrix.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `d x k`, orthonormal columns ordered by decreasing eigenvalue.
    pub components: Array2<f64>,
    /// All covariance eigenvalues, decreasing.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance per eigenvalue.
    pub explained_ratio: Vec<f64>,
    /// `N x k` scores.
    pub scores: Array2<f64>,
    pub rank_deficient: bool,
}

/// Eigenpairs of a symmetric matrix, largest first.
pub(crate) fn sorted_eigen(m: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn tolerance(values: &[f64], dim: usize) -> f64 {
    values.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE) * dim as f64 * 1e-12
}

pub fn pca(x: ArrayView2<'_, f64>, k: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 points, got {n}")));
    }
    if k == 0 || k > d {
        return Err(Error::invalid(format!("cannot extract {k} components from {d} dimensions")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let xc = &x - &mean;
    let cov = xc.t().dot(&xc) / (n - 1) as f64;
    let (mut values, vectors) = sorted_eigen(cov);
    let tol = tolerance(&values, d.max(n));
    for v in values.iter_mut() {
        if *v < tol {
            *v = 0.0;
        }
    }
    let total: f64 = values.iter().sum();
    let explained_ratio = values
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let rank = values.iter().filter(|&&v| v > 0.0).count();
    let mut components = vectors.slice(ndarray::s![.., ..k]).to_owned();
    for (c, &v) in values.iter().take(k).enumerate() {
        if v == 0.0 {
            components.column_mut(c).fill(0.0);
        }
    }
    fix_signs(&mut components);
    let scores = xc.dot(&components);
    Ok(Pca {
        mean,
        components,
        eigenvalues: values,
        explained_ratio,
        scores,
        rank_deficient: rank < k,
    })
}

/// Scores on the two leading components.
pub fn project_pca(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(pca(x, 2)?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn collinear_points_are_rank_one() {
        let mut x = Array2::<f64>::zeros((3, 128));
        for i in 0..3 {
            x[[i, 0]] = i as f64;
            x[[i, 1]] = i as f64;
        }
        let p = pca(x.view(), 2).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.rank_deficient);
        assert!(p.scores.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_convention() {
        let x = array![[0.0, 0.0], [-1.0, 0.1], [-3.0, -0.1], [4.0, 0.0]];
        let p = pca(x.view(), 2).unwrap();
        let c = p.components.column(0);
        let big = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        assert!(big > 0.0);
    }
}
