use ndarray::{s, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::WindowSet;
use crate::model::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Per-variable z-score with statistics of the training region.
    #[default]
    Dataset,
    /// Per-window, per-variable z-score.
    Sample,
    /// Per-variable z-score over each batch.
    Batch,
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(NormMode::Dataset),
            "sample" => Ok(NormMode::Sample),
            "batch" => Ok(NormMode::Batch),
            other => Err(Error::invalid(format!(
                "unknown normalization {other:?} (expected dataset, sample or batch)"
            ))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::Dataset => "dataset",
            NormMode::Sample => "sample",
            NormMode::Batch => "batch",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    /// Per-variable mean and population std (dataset mode only).
    #[serde(default)]
    pub mean: Vec<f64>,
    #[serde(default)]
    pub std: Vec<f64>,
    /// Per-window statistics of a sample-mode pass, kept for `denormalize`.
    #[serde(skip)]
    pub per_window: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Mean and population std; a zero std is replaced by 1.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        (mean, sd)
    } else {
        (mean, 1.0)
    }
}

impl NormStats {
    /// Dataset-mode statistics of a `T x v` block of rows.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Self {
        let (mean, std): (Vec<f64>, Vec<f64>) = rows
            .axis_iter(Axis(1))
            .enumerate()
            .map(|(j, c)| {
                let (m, sd) = moments(c.iter().copied());
                if sd == 1.0 && c.iter().all(|&v| v == c[0]) {
                    log::warn!("variable {j} is constant; its std is set to 1");
                }
                (m, sd)
            })
            .unzip();
        Self {
            mode: NormMode::Dataset,
            mean,
            std,
            per_window: Vec::new(),
        }
    }

    pub fn tag(mode: NormMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Rows of the region a window set was cut from, each exactly once.
fn covered_rows(ws: &WindowSet) -> ndarray::Array2<f64> {
    let n = ws.len();
    let (w, s) = (ws.config.w, ws.config.s);
    let total = (n - 1) * s + w;
    let v = ws.n_vars();
    ndarray::Array2::from_shape_fn((total, v), |(r, j)| {
        let i = (r / s).min(n - 1);
        ws.data[[i, j, r - i * s]]
    })
}

/// Normalize a window set. Dataset-mode statistics come from the rows the
/// windows cover, so pass the training region here and reuse the returned
/// statistics elsewhere through [`normalize_with`].
pub fn normalize(ws: &WindowSet, mode: NormMode) -> (WindowSet, NormStats) {
    match mode {
        NormMode::Dataset => {
            let stats = NormStats::fit(covered_rows(ws).view());
            let out = normalize_with(ws, &stats).expect("fitted on the same variables");
            (out, stats)
        }
        NormMode::Sample => {
            let mut out = ws.clone();
            let mut per_window = Vec::with_capacity(ws.len());
            for mut win in out.data.axis_iter_mut(Axis(0)) {
                let mut ms = Vec::new();
                let mut sds = Vec::new();
                for mut row in win.axis_iter_mut(Axis(0)) {
                    let (m, sd) = moments(row.iter().copied());
                    row.mapv_inplace(|x| (x - m) / sd);
                    ms.push(m);
                    sds.push(sd);
                }
                per_window.push((ms, sds));
            }
            let stats = NormStats {
                mode,
                per_window,
                ..NormStats::default()
            };
            (out, stats)
        }
        NormMode::Batch => (ws.clone(), NormStats::tag(mode)),
    }
}

/// Apply stored statistics. Dataset mode uses the stored moments; sample
/// mode recomputes per-window moments; batch mode normalizes the whole set
/// as one batch.
pub fn normalize_with(ws: &WindowSet, stats: &NormStats) -> Result<WindowSet> {
    match stats.mode {
        NormMode::Dataset => {
            let v = ws.n_vars();
            if stats.mean.len() != v || stats.std.len() != v {
                return Err(Error::shape(format!(
                    "normalization statistics cover {} variables, windows have {v}",
                    stats.mean.len()
                )));
            }
            let mut out = ws.clone();
            for j in 0..v {
                let (m, sd) = (stats.mean[j], stats.std[j]);
                out.data
                    .slice_mut(s![.., j, ..])
                    .mapv_inplace(|x| (x - m) / sd);
            }
            Ok(out)
        }
        NormMode::Sample => Ok(normalize(ws, NormMode::Sample).0),
        NormMode::Batch => {
            let mut out = ws.clone();
            normalize_batch(&mut out.data);
            Ok(out)
        }
    }
}

/// Undo [`normalize`]. Batch mode keeps no statistics and is left as is.
pub fn denormalize(ws: &WindowSet, stats: &NormStats) -> Result<WindowSet> {
    let mut out = ws.clone();
    match stats.mode {
        NormMode::Dataset => {
            for j in 0..ws.n_vars() {
                let (m, sd) = (stats.mean[j], stats.std[j]);
                out.data
                    .slice_mut(s![.., j, ..])
                    .mapv_inplace(|x| x * sd + m);
            }
        }
        NormMode::Sample => {
            if stats.per_window.len() != ws.len() {
                return Err(Error::shape(format!(
                    "sample statistics cover {} windows, set has {}",
                    stats.per_window.len(),
                    ws.len()
                )));
            }
            for (mut win, (ms, sds)) in out.data.axis_iter_mut(Axis(0)).zip(&stats.per_window) {
                for (j, mut row) in win.axis_iter_mut(Axis(0)).enumerate() {
                    row.mapv_inplace(|x| x * sds[j] + ms[j]);
                }
            }
        }
        NormMode::Batch => {}
    }
    Ok(out)
}

/// Per-variable z-score over all windows and steps of a batch.
pub fn normalize_batch<F: Real>(x: &mut Array3<F>) {
    for j in 0..x.dim().1 {
        let mut view = x.slice_mut(s![.., j, ..]);
        let (m, sd) = moments(view.iter().map(|v| v.as_f64()));
        let (m, sd) = (F::lit(m), F::lit(sd));
        view.mapv_inplace(|v| (v - m) / sd);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{slide_windows, Region, TimeSeriesDataset, WindowConfig};

    fn ws(values: Vec<f64>, w: usize, s: usize) -> WindowSet {
        let ds = TimeSeriesDataset::univariate("x", values).unwrap();
        slide_windows(&ds, WindowConfig::new(w, s), Region::All).unwrap()
    }

    #[test]
    fn sample_mode_hand_example() {
        let (out, _) = normalize(&ws(vec![2.0, 4.0, 6.0], 3, 1), NormMode::Sample);
        let got = out.window(0).row(0).to_vec();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn constant_variable_gets_unit_std() {
        let (out, stats) = normalize(&ws(vec![3.0; 6], 3, 1), NormMode::Dataset);
        assert_eq!(stats.std, vec![1.0]);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trips() {
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 5.0 + i as f64).collect();
        let orig = ws(vals, 8, 3);
        for mode in [NormMode::Dataset, NormMode::Sample] {
            let (n, st) = normalize(&orig, mode);
            let back = denormalize(&n, &st).unwrap();
            for (a, b) in back.data.iter().zip(orig.data.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_stats_use_each_row_once() {
        let s = normalize(&ws(vec![0.0, 0.0, 0.0, 4.0], 2, 1), NormMode::Dataset).1;
        assert_eq!(s.mean, vec![1.0]);
        assert!((s.std[0] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_mode_is_zero_mean_unit_std() {
        let mut x = Array3::<f64>::from_shape_fn((3, 2, 5), |(a, b, c)| (a * 10 + b * 3 + c) as f64);
        normalize_batch(&mut x);
        for j in 0..2 {
            let v = x.slice(s![.., j, ..]);
            let m = v.mean().unwrap();
            let var = v.mapv(|a| (a - m).powi(2)).mean().unwrap();
            assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
