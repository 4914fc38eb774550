use ndarray::{Array2, ArrayView2};

use super::pca::{pca, sorted_eigen};
use super::{fix_signs, sq_distances};
use crate::datastore::WindowSet;
use crate::{Error, Result};

/// Above this many points the double-centred matrix is not formed; the
/// coordinates come from the equivalent covariance eigenproblem instead.
const DIRECT_LIMIT: usize = 1000;

/// Classical MDS of a Euclidean distance matrix to 2D.
pub fn classical_mds(d: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::shape("distance matrix must be square"));
    }
    if n < 3 {
        return Err(Error::invalid(format!("MDS needs at least 3 points, got {n}")));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("distance matrix contains non-finite values"));
    }
    from_sq(d.mapv(|v| v * v))
}

fn from_sq(d2: Array2<f64>) -> Result<Array2<f64>> {
    let n = d2.nrows();
    let row_means: Vec<f64> = d2.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = Array2::from_shape_fn((n, n), |(i, j)| {
        -0.5 * (d2[[i, j]] - row_means[i] - row_means[j] + grand)
    });
    let (values, vectors) = sorted_eigen(b);
    let mut y = Array2::<f64>::zeros((n, 2));
    for k in 0..2 {
        let l = values[k].max(0.0).sqrt();
        for i in 0..n {
            y[[i, k]] = vectors[[i, k]] * l;
        }
    }
    fix_signs(&mut y);
    Ok(y)
}

/// Classical MDS on the Euclidean distances between rows.
pub fn project_mds(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid(format!("MDS needs at least 3 points, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("MDS input contains non-finite values"));
    }
    if n <= DIRECT_LIMIT {
        return from_sq(sq_distances(x));
    }
    let mut y = if x.ncols() >= 2 {
        pca(x, 2)?.scores
    } else {
        let mut y = Array2::<f64>::zeros((n, 2));
        y.column_mut(0).assign(&pca(x, 1)?.scores.column(0));
        y
    };
    fix_signs(&mut y);
    Ok(y)
}

/// One row per window with all variables concatenated.
pub fn flatten_windows(ws: &WindowSet) -> Array2<f64> {
    let (n, v, w) = ws.data.dim();
    ws.data
        .to_owned()
        .into_shape_with_order((n, v * w))
        .expect("contiguous window data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dists(y: &Array2<f64>) -> Array2<f64> {
        sq_distances(y.view()).mapv(f64::sqrt)
    }

    #[test]
    fn equilateral_triangle() {
        let d = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let y = classical_mds(d.view()).unwrap();
        let r = dists(&y);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((r[[i, j]] - 1.0).abs() < 1e-9, "{}", r[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn duplicates_coincide() {
        let x = array![[0.0, 1.0], [0.0, 1.0], [3.0, 2.0], [5.0, -1.0]];
        let y = project_mds(x.view()).unwrap();
        assert!((&y.row(0) - &y.row(1)).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn direct_and_dual_paths_agree() {
        let x = Array2::from_shape_fn((40, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64);
        let a = from_sq(sq_distances(x.view())).unwrap();
        let mut b = pca(x.view(), 2).unwrap().scores;
        fix_signs(&mut b);
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }
}
