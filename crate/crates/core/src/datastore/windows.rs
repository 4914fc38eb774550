use ndarray::{s, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::model::Real;
use crate::{Error, Result};

/// Part of a dataset a window set is drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    #[default]
    All,
    Train,
    Test,
}

impl Region {
    /// Half-open row range of the region. Without a split point the
    /// training region is the whole series and there is no test region.
    pub fn bounds(self, ds: &TimeSeriesDataset) -> Result<(usize, usize)> {
        let t = ds.len();
        match (self, ds.split_point) {
            (Region::All, _) | (Region::Train, None) => Ok((0, t)),
            (Region::Train, Some(sp)) => Ok((0, sp)),
            (Region::Test, Some(sp)) => Ok((sp, t)),
            (Region::Test, None) => Err(Error::invalid(format!(
                "dataset {} has no test split",
                ds.id
            ))),
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Region::All),
            "train" => Ok(Region::Train),
            "test" => Ok(Region::Test),
            other => Err(Error::invalid(format!(
                "unknown region {other:?} (expected all, train or test)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowConfig {
    pub w: usize,
    pub s: usize,
}

impl WindowConfig {
    pub fn new(w: usize, s: usize) -> Self {
        Self { w, s }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.s == 0 || self.s > self.w {
            return Err(Error::OutOfRange(format!(
                "stride {} must lie in [1, {}]",
                self.s, self.w
            )));
        }
        if self.w == 0 || self.w > len {
            return Err(Error::OutOfRange(format!(
                "window size {} must lie in [1, {len}]",
                self.w
            )));
        }
        Ok(())
    }
}

/// `floor((T - w) / s) + 1`.
pub fn n_windows(len: usize, w: usize, s: usize) -> usize {
    (len - w) / s + 1
}

/// Windows of one region, materialized as `N x v x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub dataset_id: String,
    pub config: WindowConfig,
    pub region: Region,
    /// Absolute row index of the region start.
    pub origin: usize,
    /// Window starts relative to the region, `starts[i] = i * s`.
    pub starts: Vec<usize>,
    pub data: Array3<f64>,
}

pub fn slide_windows(ds: &TimeSeriesDataset, cfg: WindowConfig, region: Region) -> Result<WindowSet> {
    let (lo, hi) = region.bounds(ds)?;
    cfg.validate(hi - lo)?;
    let n = n_windows(hi - lo, cfg.w, cfg.s);
    let starts: Vec<usize> = (0..n).map(|i| i * cfg.s).collect();
    let v = ds.n_vars();
    let mut data = Array3::<f64>::zeros((n, v, cfg.w));
    for (i, &st) in starts.iter().enumerate() {
        let rows = ds.values.slice(s![lo + st..lo + st + cfg.w, ..]);
        data.slice_mut(s![i, .., ..]).assign(&rows.t());
    }
    Ok(WindowSet {
        dataset_id: ds.id.clone(),
        config: cfg,
        region,
        origin: lo,
        starts,
        data,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.data.dim().1
    }

    /// Window `i` as `v x w`.
    pub fn window(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![i, .., ..])
    }

    /// Absolute `[start, start + w)` of every window.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        self.starts
            .iter()
            .map(|&st| (self.origin + st, self.origin + st + self.config.w))
            .collect()
    }

    /// Gather windows `idx`, keeping the first `len` steps, as `B x v x len`.
    pub fn batch<F: Real>(&self, idx: &[usize], len: usize) -> Array3<F> {
        let (_, v, w) = self.data.dim();
        let len = len.min(w);
        let mut out = Array3::<F>::zeros((idx.len(), v, len));
        for (b, &i) in idx.iter().enumerate() {
            for j in 0..v {
                for t in 0..len {
                    out[[b, j, t]] = F::lit(self.data[[i, j, t]]);
                }
            }
        }
        out
    }
}

/// Indices of training and validation windows. With a test artifact the
/// last `ceil(0.2 N)` windows are held out, otherwise as many are drawn at
/// random without replacement.
pub fn split_train_val(
    n: usize,
    has_test_artifact: bool,
    rng: &mut crate::Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 windows for a train/validation split, have {n}"
        )));
    }
    let n_val = (0.2 * n as f64).ceil() as usize;
    let val: Vec<usize> = if has_test_artifact {
        (n - n_val..n).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, n, n_val).into_vec();
        v.sort_unstable();
        v
    };
    let mut is_val = vec![false; n];
    for &i in &val {
        is_val[i] = true;
    }
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> TimeSeriesDataset {
        TimeSeriesDataset::univariate("ramp", (0..t).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let ws = slide_windows(&ramp(10), WindowConfig::new(4, 2), Region::All).unwrap();
        assert_eq!(ws.starts, vec![0, 2, 4, 6]);
        assert_eq!(ws.window(3).to_owned().into_raw_vec_and_offset().0, vec![6.0, 7.0, 8.0, 9.0]);
        let ws = slide_windows(&ramp(10), WindowConfig::new(10, 1), Region::All).unwrap();
        assert_eq!(ws.len(), 1);
    }

    #[test]
    fn regions_follow_the_split_point() {
        let ds = ramp(20).with_split(15).unwrap();
        let tr = slide_windows(&ds, WindowConfig::new(5, 1), Region::Train).unwrap();
        let te = slide_windows(&ds, WindowConfig::new(5, 1), Region::Test).unwrap();
        assert_eq!(tr.len(), 11);
        assert_eq!(te.len(), 1);
        assert_eq!(te.window(0)[[0, 0]], 15.0);
        assert_eq!(te.intervals(), vec![(15, 20)]);
        assert!(slide_windows(&ramp(20), WindowConfig::new(5, 1), Region::Test).is_err());
    }

    #[test]
    fn oversized_window_is_rejected() {
        assert!(slide_windows(&ramp(10), WindowConfig::new(11, 1), Region::All).is_err());
        assert!(slide_windows(&ramp(10), WindowConfig::new(4, 5), Region::All).is_err());
    }

    #[test]
    fn temporal_holdout() {
        let mut rng = crate::seeded_rng(0);
        let (tr, val) = split_train_val(10, true, &mut rng).unwrap();
        assert_eq!(val, vec![8, 9]);
        assert_eq!(tr.len(), 8);
        let (tr, val) = split_train_val(100, true, &mut rng).unwrap();
        assert!(tr.iter().max() < val.iter().min());
    }

    #[test]
    fn random_holdout_is_disjoint() {
        let mut rng = crate::seeded_rng(3);
        let (tr, val) = split_train_val(10, false, &mut rng).unwrap();
        assert_eq!(val.len(), 2);
        assert!(tr.iter().all(|i| !val.contains(i)));
        assert_eq!(tr.len() + val.len(), 10);
        assert!(split_train_val(4, false, &mut rng).is_err());
    }
}
