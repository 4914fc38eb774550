//! Request validation and the slide, encode, project pipeline shared by the
//! HTTP API and the CLI.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tsve_core::datastore::{
    slide_windows, ArtifactStore, DatasetMeta, EncoderArtifact, EncoderMeta, Region, TimeSeriesDataset, WindowConfig,
};
use tsve_core::masking::MaskConfig;
use tsve_core::model::Arch;
use tsve_core::projector::{encode_windows, project, EmbeddingMatrix, Method, ProjectionConfig, ProjectionResult};

use crate::error::ApiError;

pub type ApiResult<T> = std::result::Result<T, ApiError>;

/// Body of `POST /api/v1/embeddings`. Omitted fields take defaults: the
/// encoder's `w`, stride `max(1, w/10)`, UMAP, seed 0 and the whole series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRequest {
    pub dataset_id: String,
    pub encoder_id: String,
    #[serde(default)]
    pub split: Region,
    #[serde(default)]
    pub window_size: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub projection: Option<Method>,
    #[serde(default)]
    pub seed: u64,
}

impl EmbeddingRequest {
    pub fn new(dataset_id: &str, encoder_id: &str) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            encoder_id: encoder_id.to_string(),
            split: Region::All,
            window_size: None,
            stride: None,
            projection: None,
            seed: 0,
        }
    }
}

/// A request with every default filled in and the artifact versions it
/// was checked against. Used as the cache key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ResolvedRequest {
    pub dataset_id: String,
    pub encoder_id: String,
    pub split: Region,
    pub window_size: usize,
    pub stride: usize,
    pub projection: Method,
    pub seed: u64,
    pub dataset_version: String,
    pub encoder_version: String,
}

pub fn default_stride(w: usize) -> usize {
    (w / 10).max(1)
}

/// Check a request against artifact metadata without loading any data.
pub fn resolve(store: &ArtifactStore, req: &EmbeddingRequest) -> ApiResult<ResolvedRequest> {
    let ds = store.dataset_meta(&req.dataset_id)?;
    let enc = store.encoder_meta(&req.encoder_id)?;
    let projection = req.projection.unwrap_or(Method::Umap);
    if projection == Method::Mds {
        return Err(ApiError::bad_request("projection must be one of pca, tsne or umap"));
    }
    let w = req.window_size.unwrap_or(enc.w);
    enc.check_window(w)?;
    let s = req.stride.unwrap_or_else(|| default_stride(w));
    if s == 0 || s > w {
        return Err(ApiError::bad_request(format!("stride {s} outside the valid range [1,{w}]")));
    }
    if ds.n_vars != enc.in_vars {
        return Err(ApiError::conflict(format!(
            "encoder {} expects {} variables but dataset {} has {}",
            enc.id, enc.in_vars, ds.id, ds.n_vars
        )));
    }
    let (lo, hi) = match (req.split, ds.split_point) {
        (Region::All, _) | (Region::Train, None) => (0, ds.length),
        (Region::Train, Some(sp)) => (0, sp),
        (Region::Test, Some(sp)) => (sp, ds.length),
        (Region::Test, None) => {
            return Err(ApiError::bad_request(format!("dataset {} has no test split", ds.id)));
        }
    };
    if hi - lo < w {
        return Err(ApiError::bad_request(format!(
            "window size {w} exceeds the {} steps of the {:?} region",
            hi - lo,
            req.split
        )));
    }
    Ok(ResolvedRequest {
        dataset_id: ds.id,
        encoder_id: enc.id,
        split: req.split,
        window_size: w,
        stride: s,
        projection,
        seed: req.seed,
        dataset_version: ds.created_at,
        encoder_version: enc.created_at,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub dataset_id: String,
    pub encoder_id: String,
    pub split: Region,
    pub window_size: usize,
    pub stride: usize,
    pub n_windows: usize,
    #[serde(flatten)]
    pub projection: ProjectionResult,
}

/// Loaded artifacts, keyed by id and creation time so a rewritten artifact
/// is picked up on the next request.
#[derive(Default)]
pub struct ArtifactMemo {
    datasets: Mutex<HashMap<(String, String), Arc<TimeSeriesDataset>>>,
    encoders: Mutex<HashMap<(String, String), Arc<EncoderArtifact>>>,
}

impl ArtifactMemo {
    pub fn dataset(&self, store: &ArtifactStore, id: &str, version: &str) -> ApiResult<Arc<TimeSeriesDataset>> {
        let key = (id.to_string(), version.to_string());
        if let Some(ds) = self.datasets.lock().unwrap().get(&key) {
            return Ok(ds.clone());
        }
        let ds = Arc::new(store.load_dataset(id)?);
        let mut map = self.datasets.lock().unwrap();
        map.retain(|(k, _), _| k != id);
        map.insert(key, ds.clone());
        Ok(ds)
    }

    pub fn encoder(&self, store: &ArtifactStore, id: &str, version: &str) -> ApiResult<Arc<EncoderArtifact>> {
        let key = (id.to_string(), version.to_string());
        if let Some(e) = self.encoders.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let e = Arc::new(store.load_encoder(id)?);
        let mut map = self.encoders.lock().unwrap();
        map.retain(|(k, _), _| k != id);
        map.insert(key, e.clone());
        Ok(e)
    }
}

pub struct Computed {
    pub response: EmbeddingResponse,
    pub embeddings: EmbeddingMatrix,
    pub dataset: Arc<TimeSeriesDataset>,
}

pub fn compute(store: &ArtifactStore, memo: &ArtifactMemo, r: &ResolvedRequest) -> ApiResult<Computed> {
    let ds = memo.dataset(store, &r.dataset_id, &r.dataset_version)?;
    let art = memo.encoder(store, &r.encoder_id, &r.encoder_version)?;
    let ws = slide_windows(&ds, WindowConfig::new(r.window_size, r.stride), r.split)?;
    let e = encode_windows(&art, &ws)?;
    let proj = project(&e, &ProjectionConfig::new(r.projection, r.seed))?;
    Ok(Computed {
        response: EmbeddingResponse {
            dataset_id: r.dataset_id.clone(),
            encoder_id: r.encoder_id.clone(),
            split: r.split,
            window_size: r.window_size,
            stride: r.stride,
            n_windows: proj.len(),
            projection: proj,
        },
        embeddings: e,
        dataset: ds,
    })
}

/// Entry of `GET /api/v1/datasets`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub name: String,
    pub n_vars: usize,
    pub length: usize,
    pub has_test_split: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_point: Option<usize>,
    pub step: String,
}

impl From<&DatasetMeta> for DatasetSummary {
    fn from(m: &DatasetMeta) -> Self {
        Self {
            id: m.id.clone(),
            name: m.name.clone(),
            n_vars: m.n_vars,
            length: m.length,
            has_test_split: m.has_test_split(),
            split_point: m.split_point,
            step: m.step.clone(),
        }
    }
}

/// Entry of `GET /api/v1/encoders`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub id: String,
    pub dataset_id: String,
    pub arch: Arch,
    pub w: usize,
    pub w_min: usize,
    pub w_max: usize,
    /// Window sizes accepted at inference, inclusive.
    pub allowed_range: [usize; 2],
    pub mask: MaskConfig,
    pub val_loss: Option<f64>,
    pub seed: u64,
}

impl From<&EncoderMeta> for EncoderSummary {
    fn from(m: &EncoderMeta) -> Self {
        let (lo, hi) = m.allowed_range();
        Self {
            id: m.id.clone(),
            dataset_id: m.dataset_id.clone(),
            arch: m.arch,
            w: m.w,
            w_min: m.w_min,
            w_max: m.w_max,
            allowed_range: [lo, hi],
            mask: m.mask,
            val_loss: m.val_loss.is_finite().then_some(m.val_loss),
            seed: m.seed,
        }
    }
}

/// Body of `GET /api/v1/datasets/{id}/series`: one row of values per
/// selected variable, aligned with `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSlice {
    pub vars: Vec<String>,
    pub t: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub downsampled: bool,
}

pub const DEFAULT_MAX_POINTS: usize = 1000;

/// Rows `[from, to)` of the selected variables. Longer slices than
/// `max_points` are cut into `max_points` buckets; each bucket keeps the
/// rows holding the minimum and maximum of every selected variable.
pub fn series_slice(
    ds: &TimeSeriesDataset,
    from: usize,
    to: usize,
    vars: &[String],
    max_points: usize,
) -> ApiResult<SeriesSlice> {
    let t_len = ds.len();
    if from >= to || to > t_len {
        return Err(ApiError::bad_request(format!(
            "range [{from},{to}) must satisfy 0 <= from < to <= {t_len}"
        )));
    }
    if max_points == 0 {
        return Err(ApiError::bad_request("max_points must be positive"));
    }
    let cols: Vec<usize> = if vars.is_empty() {
        (0..ds.n_vars()).collect()
    } else {
        vars.iter()
            .map(|v| {
                ds.var_names.iter().position(|n| n == v).ok_or_else(|| {
                    ApiError::bad_request(format!("unknown variable {v:?} (dataset has {:?})", ds.var_names))
                })
            })
            .collect::<ApiResult<_>>()?
    };
    let n = to - from;
    let rows: Vec<usize> = if n <= max_points {
        (from..to).collect()
    } else {
        let mut rows = Vec::with_capacity(2 * max_points * cols.len());
        for b in 0..max_points {
            let lo = from + b * n / max_points;
            let hi = from + (b + 1) * n / max_points;
            let mut keep = Vec::with_capacity(2 * cols.len());
            for &c in &cols {
                let col = ds.values.column(c);
                let (mut imin, mut imax) = (lo, lo);
                for i in lo..hi {
                    if col[i] < col[imin] {
                        imin = i;
                    }
                    if col[i] > col[imax] {
                        imax = i;
                    }
                }
                keep.push(imin);
                keep.push(imax);
            }
            keep.sort_unstable();
            keep.dedup();
            rows.extend(keep);
        }
        rows
    };
    Ok(SeriesSlice {
        vars: cols.iter().map(|&c| ds.var_names[c].clone()).collect(),
        values: cols
            .iter()
            .map(|&c| rows.iter().map(|&i| ds.values[[i, c]]).collect())
            .collect(),
        t: rows,
        downsampled: n > max_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ds() -> TimeSeriesDataset {
        let mut values = Array2::from_shape_fn((5000, 2), |(t, j)| ((t as f64) * 0.01).sin() + j as f64);
        values[[1234, 0]] = 100.0;
        values[[4321, 1]] = -50.0;
        TimeSeriesDataset::new("d", values, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn short_slices_are_verbatim() {
        let d = ds();
        let s = series_slice(&d, 0, 10, &[], 1000).unwrap();
        assert_eq!(s.t, (0..10).collect::<Vec<_>>());
        assert_eq!(s.values.len(), 2);
        assert_eq!(s.values[1][3], d.values[[3, 1]]);
        assert!(!s.downsampled);
    }

    #[test]
    fn downsampling_keeps_extremes() {
        let d = ds();
        let s = series_slice(&d, 0, 5000, &[], 100).unwrap();
        assert!(s.downsampled);
        assert!(s.t.len() <= 400);
        assert!(s.values[0].contains(&100.0));
        assert!(s.values[1].contains(&-50.0));
        assert!(s.t.windows(2).all(|w| w[0] < w[1]));
        let only_a = series_slice(&d, 0, 5000, &["a".into()], 100).unwrap();
        assert_eq!(only_a.values.len(), 1);
        assert!(only_a.t.len() <= 200);
    }

    #[test]
    fn bad_ranges_and_names() {
        let d = ds();
        assert!(series_slice(&d, 10, 10, &[], 10).is_err());
        assert!(series_slice(&d, 0, 5001, &[], 10).is_err());
        let e = series_slice(&d, 0, 10, &["zz".into()], 10).unwrap_err();
        assert_eq!(e.status.as_u16(), 400);
    }

    #[test]
    fn default_stride_is_a_tenth() {
        assert_eq!(default_stride(54), 5);
        assert_eq!(default_stride(9), 1);
    }
}
