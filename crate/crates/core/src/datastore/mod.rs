//! Datasets, windowing, normalization and the on-disk artifact store.

mod ingest;
mod norm;
mod store;
mod weights;
mod windows;

pub use ingest::{ingest, read_csv, IngestOptions, RawTable};
pub use norm::{denormalize, normalize, normalize_batch, normalize_with, NormMode, NormStats};
pub use store::{
    is_valid_id, slugify, ArtifactStore, DatasetMeta, EncoderArtifact, EncoderMeta,
};
pub use weights::{decode_weights, encode_weights, read_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use windows::{n_windows, slide_windows, split_train_val, Region, WindowConfig, WindowSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One regular (multi)variate series. `values` is `T x v`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub id: String,
    pub name: String,
    pub values: Array2<f64>,
    pub var_names: Vec<String>,
    /// Nominal sampling interval, informational only (e.g. `"10min"`).
    pub step: String,
    /// First index of the test region, if the series was split.
    pub split_point: Option<usize>,
    /// Where the data came from (`"synthgen:s1"`, a file name, ...).
    pub source: String,
}

impl TimeSeriesDataset {
    pub fn new(id: &str, values: Array2<f64>, var_names: Vec<String>) -> Result<Self> {
        let ds = Self {
            id: id.to_string(),
            name: id.to_string(),
            values,
            var_names,
            step: "1".to_string(),
            split_point: None,
            source: String::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Univariate series with a default variable name.
    pub fn univariate(id: &str, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        let values = Array2::from_shape_vec((n, 1), values)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(id, values, vec!["value".to_string()])
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_split(mut self, split_point: usize) -> Result<Self> {
        self.split_point = Some(split_point);
        self.validate()?;
        Ok(self)
    }

    /// Split at `floor(fraction * T)`.
    pub fn with_split_fraction(self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "split fraction {fraction} must lie in (0, 1)"
            )));
        }
        let at = (fraction * self.len() as f64).floor() as usize;
        self.with_split(at)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, v) = self.values.dim();
        if t < 2 {
            return Err(Error::invalid(format!(
                "dataset {} needs at least 2 time steps, has {t}",
                self.id
            )));
        }
        if v == 0 {
            return Err(Error::invalid(format!("dataset {} has no variables", self.id)));
        }
        if self.var_names.len() != v {
            return Err(Error::shape(format!(
                "dataset {} has {v} columns but {} variable names",
                self.id,
                self.var_names.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "dataset {} has a non-finite value at row {}",
                self.id,
                i / v
            )));
        }
        if let Some(sp) = self.split_point {
            if sp == 0 || sp >= t {
                return Err(Error::OutOfRange(format!(
                    "split point {sp} must lie in (0, {t})"
                )));
            }
        }
        Ok(())
    }

    pub fn has_test_split(&self) -> bool {
        self.split_point.is_some()
    }

    /// Block means of `factor` consecutive rows; the split point is floored.
    pub fn resample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("resample factor must be positive"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let cols: Vec<Vec<f64>> = self
            .values
            .columns()
            .into_iter()
            .map(|c| ingest::block_means(&c.to_vec(), factor))
            .collect();
        let t = cols[0].len();
        let values = Array2::from_shape_fn((t, cols.len()), |(i, j)| cols[j][i]);
        let step = match self.step.strip_suffix("min").and_then(|n| n.parse::<f64>().ok()) {
            Some(m) => ingest::step_label(m * 60.0 * factor as f64),
            None => format!("{}x{}", factor, self.step),
        };
        let ds = Self {
            values,
            step,
            split_point: self.split_point.map(|p| p / factor),
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Ground truth carried alongside generated data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub changepoints: Vec<usize>,
    /// Half-open `[start, end)` index intervals.
    pub anomaly_intervals: Vec<(usize, usize)>,
    /// Half-open interval plus the indices of the variables involved.
    pub motif_occurrences: Vec<((usize, usize), Vec<usize>)>,
}

impl GroundTruth {
    /// Map indices onto a series aggregated by `factor` (mean resampling).
    pub fn rescale(&self, factor: usize) -> GroundTruth {
        let f = factor.max(1);
        let span = |(a, b): (usize, usize)| (a / f, b.div_ceil(f));
        GroundTruth {
            changepoints: self.changepoints.iter().map(|c| c / f).collect(),
            anomaly_intervals: self.anomaly_intervals.iter().map(|&iv| span(iv)).collect(),
            motif_occurrences: self
                .motif_occurrences
                .iter()
                .map(|(iv, vars)| (span(*iv), vars.clone()))
                .collect(),
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let ordered = |ivs: &mut Vec<(usize, usize)>| -> Result<()> {
            ivs.sort();
            for w in ivs.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::invalid(format!(
                        "ground-truth intervals {:?} and {:?} overlap",
                        w[0], w[1]
                    )));
                }
            }
            if let Some(&(a, b)) = ivs.iter().find(|(a, b)| a >= b || *b > len) {
                return Err(Error::OutOfRange(format!(
                    "ground-truth interval [{a}, {b}) outside [0, {len})"
                )));
            }
            Ok(())
        };
        ordered(&mut self.anomaly_intervals.clone())?;
        ordered(&mut self.motif_occurrences.iter().map(|(iv, _)| *iv).collect())?;
        if let Some(c) = self.changepoints.iter().find(|&&c| c >= len) {
            return Err(Error::OutOfRange(format!("changepoint {c} outside [0, {len})")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_block_means() {
        let mut ds = TimeSeriesDataset::univariate("x", (0..25).map(|i| i as f64).collect()).unwrap();
        ds.step = "1min".into();
        let ds = ds.with_split(13).unwrap();
        let r = ds.resample(10).unwrap();
        assert_eq!(r.values.column(0).to_vec(), vec![4.5, 14.5]);
        assert_eq!(r.step, "10min");
        assert_eq!(r.split_point, Some(1));
    }
}
