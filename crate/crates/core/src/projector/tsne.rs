//! Exact t-SNE.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sq_distances;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    pub points: Array2<f64>,
    pub perplexity: f64,
    /// KL(P || Q) of the initial and final layouts, without exaggeration.
    pub kl_initial: f64,
    pub kl_final: f64,
}

const ENTROPY_TOL: f64 = 1e-7;
const MAX_SEARCH: usize = 200;
const P_FLOOR: f64 = 1e-12;

/// Row-conditional affinities whose perplexity is `perplexity`, along with
/// the perplexity each row reached.
pub fn perplexity_affinities(d2: ArrayView2<'_, f64>, perplexity: f64) -> (Array2<f64>, Vec<f64>) {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    let mut reached = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[[i, j]])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut h = 0.0;
        for _ in 0..MAX_SEARCH {
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for j in 0..n {
                let v = if j == i {
                    0.0
                } else {
                    (-(d2[[i, j]] - dmin) * beta).exp()
                };
                row[j] = v;
                sum += v;
                wsum += v * (d2[[i, j]] - dmin);
            }
            h = sum.ln() + beta * wsum / sum;
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[[i, j]] = row[j] / sum;
        }
        reached.push(h.exp());
    }
    (p, reached)
}

fn symmetric_p(x: ArrayView2<'_, f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let (cond, _) = perplexity_affinities(sq_distances(x).view(), perplexity);
    let mut p = &cond + &cond.t();
    let total = 2.0 * n as f64;
    p.mapv_inplace(|v| (v / total).max(P_FLOOR));
    for i in 0..n {
        p[[i, i]] = 0.0;
    }
    p
}

fn kl(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut num = Array2::<f64>::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
            let q = 1.0 / (1.0 + d);
            num[[i, j]] = q;
            num[[j, i]] = q;
            z += 2.0 * q;
        }
    }
    let mut out = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[[i, j]] / z).max(P_FLOOR);
                out += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
    }
    out
}

pub fn tsne(x: ArrayView2<'_, f64>, cfg: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let n = x.nrows();
    if n < 5 {
        return Err(Error::invalid(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-SNE input contains non-finite values"));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    if !(perplexity > 1.0) {
        return Err(Error::invalid(format!("perplexity {perplexity} is too small")));
    }
    let p = symmetric_p(x, perplexity);

    let mut rng = crate::seeded_rng(seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y = Array2::from_shape_simple_fn((n, 2), || normal.sample(&mut rng));
    let kl_initial = kl(&p, &y);

    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.exaggeration_iters {
            cfg.momentum
        } else {
            cfg.final_momentum
        };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                let q = 1.0 / (1.0 + d);
                num[[i, j]] = q;
                num[[j, i]] = q;
                z += 2.0 * q;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[[i, j]];
                let m = (exag * p[[i, j]] - q / z) * q;
                g0 += m * (y[[i, 0]] - y[[j, 0]]);
                g1 += m * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(0.01)
            };
            *u = momentum * *u - cfg.learning_rate * *gain * g;
        }
        y += &update;
        for c in 0..2 {
            let m = y.column(c).sum() / n as f64;
            y.column_mut(c).mapv_inplace(|v| v - m);
        }
    }
    let kl_final = kl(&p, &y);
    Ok(TsneResult {
        points: y,
        perplexity,
        kl_initial,
        kl_final,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_search_hits_target() {
        let x = Array2::from_shape_fn((60, 3), |(i, j)| ((i * 13 + j * 7) % 17) as f64 * 0.3 + j as f64);
        let (p, reached) = perplexity_affinities(sq_distances(x.view()).view(), 10.0);
        for (i, r) in reached.iter().enumerate() {
            assert!((r - 10.0).abs() < 1e-4, "row {i}: {r}");
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_tiny_inputs() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(tsne(x.view(), &TsneConfig::default(), 0).is_err());
    }
}
