//! UMAP with exact nearest neighbours and fixed curve constants.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::pca::pca;
use super::sq_distances;
use crate::{Error, Result};

/// Low-dimensional kernel `1 / (1 + a d^(2b))` fitted for `min_dist = 0.1`.
pub const UMAP_A: f64 = 1.577;
pub const UMAP_B: f64 = 0.895;

const SMOOTH_TOL: f64 = 1e-5;
const SMOOTH_ITERS: usize = 128;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const GRAD_CLIP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmapConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    /// Optimization epochs; `None` picks 500 up to 10 000 points and 200
    /// above, the usual schedule.
    pub epochs: Option<usize>,
    pub negative_samples: usize,
    pub learning_rate: f64,
}

impl Default for UmapConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            epochs: None,
            negative_samples: 5,
            learning_rate: 1.0,
        }
    }
}

impl UmapConfig {
    pub fn epochs_for(&self, n: usize) -> usize {
        self.epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 })
    }
}

/// Symmetric fuzzy neighbourhood graph, both directions of every edge.
#[derive(Clone, Debug)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub sigmas: Vec<f64>,
    pub rhos: Vec<f64>,
}

/// Exact `k` nearest neighbours (self excluded) with Euclidean distances,
/// nearest first; ties are broken by index.
pub fn knn(x: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let d2 = sq_distances(x);
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, d2[[i, j]].sqrt()))
                .collect();
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            row
        })
        .collect()
}

/// Per-point `(sigma, rho)` such that `sum_j exp(-(d_j - rho) / sigma)` over
/// the neighbours equals `log2(k)`.
pub fn smooth_knn(dists: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let target = (k as f64).log2();
    let all_mean = {
        let (s, c) = dists
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
        if c == 0 { 0.0 } else { s / c as f64 }
    };
    let mut sigmas = Vec::with_capacity(dists.len());
    let mut rhos = Vec::with_capacity(dists.len());
    for row in dists {
        let rho = row.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
        let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..SMOOTH_ITERS {
            let psum: f64 = row
                .iter()
                .map(|&d| {
                    let e = d - rho;
                    if e > 0.0 { (-e / mid).exp() } else { 1.0 }
                })
                .sum();
            if (psum - target).abs() < SMOOTH_TOL {
                break;
            }
            if psum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_finite() { (lo + hi) / 2.0 } else { mid * 2.0 };
            }
        }
        let mean_row = if row.is_empty() {
            0.0
        } else {
            row.iter().sum::<f64>() / row.len() as f64
        };
        let floor = MIN_K_DIST_SCALE * if rho > 0.0 { mean_row } else { all_mean };
        sigmas.push(mid.max(floor));
        rhos.push(rho);
    }
    (sigmas, rhos)
}

pub fn fuzzy_graph(x: ArrayView2<'_, f64>, k: usize) -> Result<FuzzyGraph> {
    let n = x.nrows();
    if n <= k {
        return Err(Error::invalid(format!(
            "UMAP needs more points than neighbours ({n} <= {k})"
        )));
    }
    let nn = knn(x, k);
    let dists: Vec<Vec<f64>> = nn.iter().map(|r| r.iter().map(|&(_, d)| d).collect()).collect();
    let (sigmas, rhos) = smooth_knn(&dists, k);
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, row) in nn.iter().enumerate() {
        for &(j, d) in row {
            let e = d - rhos[i];
            let w = if e > 0.0 { (-e / sigmas[i]).exp() } else { 1.0 };
            directed.insert((i, j), w);
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &a) in &directed {
        let b = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = a + b - a * b;
        edges.push((i, j, w));
        if !directed.contains_key(&(j, i)) {
            edges.push((j, i, w));
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(FuzzyGraph {
        n,
        edges,
        sigmas,
        rhos,
    })
}

/// PCA scores rescaled so the first coordinate has unit standard deviation.
fn initial_layout(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut y = if x.ncols() >= 2 {
        pca(x, 2)?.scores
    } else {
        let mut y = Array2::<f64>::zeros((x.nrows(), 2));
        y.column_mut(0).assign(&pca(x, 1)?.scores.column(0));
        y
    };
    let n = y.nrows() as f64;
    let sd = (y.column(0).iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        y.mapv_inplace(|v| v / sd);
    }
    Ok(y)
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

pub fn umap(x: ArrayView2<'_, f64>, cfg: &UmapConfig, seed: u64) -> Result<Array2<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("UMAP input contains non-finite values"));
    }
    if cfg.n_neighbors < 2 {
        return Err(Error::invalid("UMAP needs at least 2 neighbours"));
    }
    let graph = fuzzy_graph(x, cfg.n_neighbors)?;
    let mut y = initial_layout(x)?;
    let n = graph.n;
    let (a, b) = (UMAP_A, UMAP_B);
    let epochs = cfg.epochs_for(n).max(1);

    let max_w = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| e.2 >= max_w / epochs as f64)
        .collect();
    let per_sample: Vec<f64> = edges.iter().map(|e| max_w / e.2).collect();
    let per_negative: Vec<f64> = per_sample
        .iter()
        .map(|p| p / cfg.negative_samples.max(1) as f64)
        .collect();
    let mut next_sample = per_sample.clone();
    let mut next_negative = per_negative.clone();

    let mut rng = crate::seeded_rng(seed);
    for epoch in 0..epochs {
        let alpha = cfg.learning_rate * (1.0 - epoch as f64 / epochs as f64);
        let e = epoch as f64;
        for (idx, &(j, k, _)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let d2 = (y[[j, 0]] - y[[k, 0]]).powi(2) + (y[[j, 1]] - y[[k, 1]]).powi(2);
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0);
                for c in 0..2 {
                    let g = clip(coeff * (y[[j, c]] - y[[k, c]]));
                    y[[j, c]] += g * alpha;
                    y[[k, c]] -= g * alpha;
                }
            }
            next_sample[idx] += per_sample[idx];

            let n_neg = ((e - next_negative[idx]) / per_negative[idx]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let d2 = (y[[j, 0]] - y[[k, 0]]).powi(2) + (y[[j, 1]] - y[[k, 1]]).powi(2);
                let coeff = if d2 > 0.0 {
                    2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for c in 0..2 {
                    let g = if coeff > 0.0 {
                        clip(coeff * (y[[j, c]] - y[[k, c]]))
                    } else {
                        GRAD_CLIP
                    };
                    y[[j, c]] += g * alpha;
                }
            }
            next_negative[idx] += n_neg as f64 * per_negative[idx];
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(n: usize) -> Array2<f64> {
        let mut rng = crate::seeded_rng(3);
        Array2::from_shape_simple_fn((n, 4), || rng.random::<f64>())
    }

    #[test]
    fn calibration_hits_log2_k() {
        let x = blob(80);
        let k = 15;
        let nn = knn(x.view(), k);
        let dists: Vec<Vec<f64>> = nn.iter().map(|r| r.iter().map(|&(_, d)| d).collect()).collect();
        let (sig, rho) = smooth_knn(&dists, k);
        for (i, row) in dists.iter().enumerate() {
            let s: f64 = row.iter().map(|&d| (-(d - rho[i]).max(0.0) / sig[i]).exp()).sum();
            assert!((s - (k as f64).log2()).abs() < 1e-3, "row {i}: {s}");
        }
    }

    #[test]
    fn graph_is_symmetric_fuzzy_union() {
        let g = fuzzy_graph(blob(40).view(), 5).unwrap();
        let m: BTreeMap<(usize, usize), f64> = g.edges.iter().map(|&(i, j, w)| ((i, j), w)).collect();
        for (&(i, j), &w) in &m {
            assert_eq!(m[&(j, i)], w);
            assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(umap(blob(15).view(), &UmapConfig::default(), 0).is_err());
    }
}
