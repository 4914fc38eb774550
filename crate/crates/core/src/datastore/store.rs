//! Local artifact store: one directory per artifact under
//! `<root>/datasets/<id>/` (`data.csv`, `meta.json`) and
//! `<root>/encoders/<id>/` (`weights.bin`, `meta.json`, optional
//! `report.json`). Writes go to a temporary sibling directory that is
//! renamed into place.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::norm::{NormMode, NormStats};
use super::weights::{read_weights, write_weights};
use super::{GroundTruth, TimeSeriesDataset};
use crate::masking::MaskConfig;
use crate::model::{dcae, Arch, ModelConfig, ParamSet};
use crate::{Error, Result};

pub const ARTIFACTS_ENV: &str = "TSVE_ARTIFACTS";

/// Lower-case, dash-separated id derived from a display name.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for ch in name.trim().chars() {
        if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_matches('-').trim_start_matches('.').to_string();
    if out.is_empty() {
        "dataset".to_string()
    } else {
        out
    }
}

/// Ids double as directory names.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_id(id: &str) -> Result<()> {
    if is_valid_id(id) {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid artifact id {id:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub name: String,
    pub n_vars: usize,
    pub length: usize,
    pub step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_point: Option<usize>,
    pub created_at: String,
    pub source: String,
}

impl DatasetMeta {
    pub fn has_test_split(&self) -> bool {
        self.split_point.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub id: String,
    pub dataset_id: String,
    pub arch: Arch,
    pub n_modules: usize,
    pub filters: usize,
    pub kernel_sizes: [usize; 3],
    pub bottleneck: usize,
    pub in_vars: usize,
    pub w: usize,
    pub w_min: usize,
    pub w_max: usize,
    pub mask: MaskConfig,
    pub norm_mode: NormMode,
    pub norm_stats: NormStats,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_loss: f64,
    pub created_at: String,
}

impl EncoderMeta {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            in_vars: self.in_vars,
            n_modules: self.n_modules,
            branch_filters: self.filters,
            kernel_sizes: self.kernel_sizes,
            bottleneck: self.bottleneck,
        }
    }

    pub fn is_variable(&self) -> bool {
        self.w_min < self.w_max
    }

    /// Inference window sizes the encoder accepts: the training interval for
    /// variable-window encoders, `[w - w/2, w + w/2]` for fixed ones. The
    /// convolutional baseline accepts any length that pads to its input size.
    pub fn allowed_range(&self) -> (usize, usize) {
        match self.arch {
            Arch::Dcae => {
                let full = dcae::padded_len(self.w);
                (full + 1 - dcae::POOL_FACTOR, full)
            }
            Arch::Mtsae if self.is_variable() => (self.w_min, self.w_max),
            Arch::Mtsae => (self.w - self.w / 2, self.w + self.w / 2),
        }
    }

    pub fn check_window(&self, w: usize) -> Result<()> {
        let (lo, hi) = self.allowed_range();
        if w < lo || w > hi {
            return Err(Error::OutOfRange(format!(
                "window size {w} outside the encoder's valid range [{lo},{hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderArtifact {
    pub meta: EncoderMeta,
    pub params: ParamSet<f32>,
}

#[derive(Clone, Debug)]
pub struct ArtifactStore {
    root: PathBuf,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Root from `TSVE_ARTIFACTS`, falling back to `default`.
    pub fn from_env(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(ARTIFACTS_ENV) {
            Some(p) if !p.is_empty() => Self::new(p),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn exists(&self) -> bool {
        self.root.is_dir()
    }

    fn kind_dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.kind_dir("datasets").join(id)
    }

    pub fn encoder_dir(&self, id: &str) -> PathBuf {
        self.kind_dir("encoders").join(id)
    }

    /// Fill a fresh temporary directory and move it to `kind/id`.
    fn write_atomic(&self, kind: &str, id: &str, fill: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        check_id(id)?;
        let parent = self.kind_dir(kind);
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let tmp = parent.join(format!(".tmp-{id}-{}-{nanos}", std::process::id()));
        std::fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        if let Err(e) = fill(&tmp) {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let target = parent.join(id);
        if target.exists() {
            std::fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        }
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        Ok(target)
    }

    fn list_metas<T: DeserializeOwned>(&self, kind: &str) -> Result<Vec<T>> {
        let dir = self.kind_dir(kind);
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| is_valid_id(n))
            .collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let meta = dir.join(&id).join("meta.json");
            if meta.is_file() {
                out.push(read_json(&meta)?);
            }
        }
        Ok(out)
    }

    pub fn save_dataset(&self, ds: &TimeSeriesDataset) -> Result<DatasetMeta> {
        ds.validate()?;
        let meta = DatasetMeta {
            id: ds.id.clone(),
            name: ds.name.clone(),
            n_vars: ds.n_vars(),
            length: ds.len(),
            step: ds.step.clone(),
            split_point: ds.split_point,
            created_at: chrono::Utc::now().to_rfc3339(),
            source: ds.source.clone(),
        };
        self.write_atomic("datasets", &ds.id, |dir| {
            let csv_path = dir.join("data.csv");
            let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Artifact {
                path: csv_path.clone(),
                reason: e.to_string(),
            })?;
            let csv_err = |e: csv::Error| Error::Artifact {
                path: csv_path.clone(),
                reason: e.to_string(),
            };
            w.write_record(&ds.var_names).map_err(csv_err)?;
            for row in ds.values.rows() {
                w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&csv_path, e))?;
            write_json(&dir.join("meta.json"), &meta)
        })?;
        Ok(meta)
    }

    pub fn dataset_meta(&self, id: &str) -> Result<DatasetMeta> {
        check_id(id)?;
        let path = self.dataset_dir(id).join("meta.json");
        if !path.is_file() {
            return Err(Error::NotFound(format!("dataset {id}")));
        }
        read_json(&path)
    }

    pub fn load_dataset(&self, id: &str) -> Result<TimeSeriesDataset> {
        let meta = self.dataset_meta(id)?;
        let path = self.dataset_dir(id).join("data.csv");
        let corrupt = |reason: String| Error::Artifact {
            path: path.clone(),
            reason,
        };
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| corrupt(e.to_string()))?;
        let var_names: Vec<String> = rdr
            .headers()
            .map_err(|e| corrupt(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut flat = Vec::with_capacity(meta.length * meta.n_vars);
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| corrupt(e.to_string()))?;
            if rec.len() != var_names.len() {
                return Err(corrupt(format!("row {r} has {} fields", rec.len())));
            }
            for cell in rec.iter() {
                flat.push(
                    cell.parse::<f64>()
                        .map_err(|_| corrupt(format!("row {r}: non-numeric value {cell:?}")))?,
                );
            }
        }
        let v = var_names.len();
        let t = if v == 0 { 0 } else { flat.len() / v };
        if t != meta.length || v != meta.n_vars {
            return Err(corrupt(format!(
                "data is {t}x{v} but meta.json declares {}x{}",
                meta.length, meta.n_vars
            )));
        }
        let values = Array2::from_shape_vec((t, v), flat).map_err(|e| corrupt(e.to_string()))?;
        let ds = TimeSeriesDataset {
            id: meta.id,
            name: meta.name,
            values,
            var_names,
            step: meta.step,
            split_point: meta.split_point,
            source: meta.source,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Store ground truth next to an existing dataset.
    pub fn save_truth(&self, id: &str, truth: &GroundTruth) -> Result<()> {
        self.dataset_meta(id)?;
        write_json(&self.dataset_dir(id).join("truth.json"), truth)
    }

    pub fn load_truth(&self, id: &str) -> Result<Option<GroundTruth>> {
        check_id(id)?;
        let path = self.dataset_dir(id).join("truth.json");
        if !path.is_file() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn list_datasets(&self) -> Result<Vec<DatasetMeta>> {
        self.list_metas("datasets")
    }

    /// Store weights, metadata and an optional training report.
    pub fn save_encoder<R: Serialize>(&self, art: &EncoderArtifact, report: Option<&R>) -> Result<PathBuf> {
        self.write_atomic("encoders", &art.meta.id, |dir| {
            write_weights(&dir.join("weights.bin"), &art.params)?;
            write_json(&dir.join("meta.json"), &art.meta)?;
            if let Some(r) = report {
                write_json(&dir.join("report.json"), r)?;
            }
            Ok(())
        })
    }

    pub fn encoder_meta(&self, id: &str) -> Result<EncoderMeta> {
        check_id(id)?;
        let path = self.encoder_dir(id).join("meta.json");
        if !path.is_file() {
            return Err(Error::NotFound(format!("encoder {id}")));
        }
        read_json(&path)
    }

    pub fn load_encoder(&self, id: &str) -> Result<EncoderArtifact> {
        let meta = self.encoder_meta(id)?;
        let params = read_weights(&self.encoder_dir(id).join("weights.bin"))?;
        Ok(EncoderArtifact { meta, params })
    }

    /// The training report stored next to an encoder, if any.
    pub fn encoder_report<R: DeserializeOwned>(&self, id: &str) -> Result<Option<R>> {
        check_id(id)?;
        let path = self.encoder_dir(id).join("report.json");
        if !path.is_file() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Encoders, optionally only those trained on `dataset_id`.
    pub fn list_encoders(&self, dataset_id: Option<&str>) -> Result<Vec<EncoderMeta>> {
        let all: Vec<EncoderMeta> = self.list_metas("encoders")?;
        Ok(all
            .into_iter()
            .filter(|m| dataset_id.is_none_or(|d| m.dataset_id == d))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn dataset(id: &str) -> TimeSeriesDataset {
        let values = Array2::from_shape_fn((50, 2), |(t, j)| (t as f64 * 0.1).sin() + j as f64 / 3.0);
        let mut ds = TimeSeriesDataset::new(id, values, vec!["a".into(), "b".into()]).unwrap();
        ds.source = "test".into();
        ds
    }

    fn encoder(id: &str, dataset_id: &str) -> EncoderArtifact {
        let mut params = ParamSet::new();
        params.insert("decoder.kernel", Tensor::from_vec(&[1, 2, 1], vec![0.5, -1.0 / 3.0]).unwrap());
        EncoderArtifact {
            meta: EncoderMeta {
                id: id.into(),
                dataset_id: dataset_id.into(),
                arch: Arch::Mtsae,
                n_modules: 6,
                filters: 32,
                kernel_sizes: [39, 19, 9],
                bottleneck: 32,
                in_vars: 1,
                w: 72,
                w_min: 36,
                w_max: 72,
                mask: MaskConfig::stateful(0.4, 3.0),
                norm_mode: NormMode::Dataset,
                norm_stats: NormStats {
                    mode: NormMode::Dataset,
                    mean: vec![0.25],
                    std: vec![1.5],
                    per_window: Vec::new(),
                },
                epochs: 3,
                batch_size: 16,
                learning_rate: 1e-3,
                seed: 0,
                val_loss: 0.123,
                created_at: "2024-01-01T00:00:00Z".into(),
            },
            params,
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let ds = dataset("d1").with_split(40).unwrap();
        store.save_dataset(&ds).unwrap();
        assert_eq!(store.load_dataset("d1").unwrap(), ds);
        assert!(store.dataset_meta("d1").unwrap().has_test_split());
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let truth = GroundTruth {
            changepoints: vec![10, 20],
            ..GroundTruth::default()
        };
        assert!(store.save_truth("d1", &truth).is_err());
        store.save_dataset(&dataset("d1")).unwrap();
        assert_eq!(store.load_truth("d1").unwrap(), None);
        store.save_truth("d1", &truth).unwrap();
        assert_eq!(store.load_truth("d1").unwrap(), Some(truth));
    }

    #[test]
    fn listing_counts_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        assert!(store.list_datasets().unwrap().is_empty());
        for id in ["a", "b", "c"] {
            store.save_dataset(&dataset(id)).unwrap();
        }
        let ids: Vec<String> = store.list_datasets().unwrap().into_iter().map(|m| m.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn encoder_round_trip_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let a = encoder("e1", "s1");
        store.save_encoder(&a, None::<&()>).unwrap();
        store.save_encoder(&encoder("e2", "s2"), Some(&serde_json::json!({"ok": true}))).unwrap();
        assert_eq!(store.load_encoder("e1").unwrap(), a);
        assert_eq!(store.list_encoders(Some("s1")).unwrap().len(), 1);
        assert_eq!(store.list_encoders(None).unwrap().len(), 2);
        assert!(store.list_encoders(Some("zz")).unwrap().is_empty());
        assert!(store.encoder_dir("e2").join("report.json").is_file());
    }

    #[test]
    fn tampered_weights_fail_with_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        store.save_encoder(&encoder("e1", "s1"), None::<&()>).unwrap();
        let p = store.encoder_dir("e1").join("weights.bin");
        let mut buf = std::fs::read(&p).unwrap();
        buf[..4].copy_from_slice(b"NOPE");
        std::fs::write(&p, buf).unwrap();
        let err = store.load_encoder("e1").unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }), "{err}");
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn missing_and_invalid_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        assert!(matches!(store.load_dataset("nope"), Err(Error::NotFound(_))));
        assert!(store.load_dataset("../etc").is_err());
        assert_eq!(slugify("My Data (v2)"), "my-data-v2");
    }

    #[test]
    fn allowed_ranges() {
        let mut m = encoder("e", "d").meta;
        assert_eq!(m.allowed_range(), (36, 72));
        m.w = 100;
        m.w_min = 100;
        m.w_max = 100;
        assert_eq!(m.allowed_range(), (50, 150));
        let err = m.check_window(151).unwrap_err().to_string();
        assert!(err.contains("[50,150]"), "{err}");
        m.arch = Arch::Dcae;
        m.w = 30;
        assert_eq!(m.allowed_range(), (25, 32));
    }
}
