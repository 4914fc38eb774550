//! Window embeddings and their 2D projections.

mod mds;
mod pca;
mod tsne;
mod umap;

pub use mds::{classical_mds, flatten_windows, project_mds};
pub use pca::{pca, project_pca, Pca};
pub use tsne::{perplexity_affinities, tsne, TsneConfig, TsneResult};
pub use umap::{fuzzy_graph, smooth_knn, umap, FuzzyGraph, UmapConfig, UMAP_A, UMAP_B};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datastore::{normalize_with, EncoderArtifact, WindowSet};
use crate::model::Network;
use crate::{Error, Result};

/// Windows per forward pass when encoding.
pub const ENCODE_BATCH: usize = 32;

/// Pooled embeddings of a window set, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Array2<f64>,
    /// Absolute `[start, end)` of every window.
    pub windows: Vec<(usize, usize)>,
    pub dataset_id: String,
    pub encoder_id: String,
    pub w: usize,
    pub s: usize,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Column z-scored copy (zero-variance columns are only centered).
    pub fn zscored(&self) -> Self {
        let mut out = self.clone();
        for mut col in out.values.axis_iter_mut(Axis(1)) {
            let n = col.len() as f64;
            let m = col.sum() / n;
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            col.mapv_inplace(|x| (x - m) / sd);
        }
        out
    }
}

/// Eval-mode embeddings of raw (unnormalized) windows.
pub fn encode_windows(art: &EncoderArtifact, ws: &WindowSet) -> Result<EmbeddingMatrix> {
    let meta = &art.meta;
    if ws.n_vars() != meta.in_vars {
        return Err(Error::shape(format!(
            "encoder {} expects {} variables, windows have {}",
            meta.id,
            meta.in_vars,
            ws.n_vars()
        )));
    }
    meta.check_window(ws.config.w)?;
    if ws.is_empty() {
        return Err(Error::invalid("window set is empty"));
    }
    let norm = normalize_with(ws, &meta.norm_stats)?;
    let net = Network::from_params(&meta.model_config(), art.params.clone());
    let n = norm.len();
    let n_chunks = n.div_ceil(ENCODE_BATCH);
    let parts = crate::par::map_range(n_chunks, |c| {
        let idx: Vec<usize> = (c * ENCODE_BATCH..((c + 1) * ENCODE_BATCH).min(n)).collect();
        net.embed(&norm.batch::<f32>(&idx, norm.config.w))
    });
    let dim = net.embedding_dim();
    let mut values = Array2::<f64>::zeros((n, dim));
    for (c, part) in parts.into_iter().enumerate() {
        let part = part?;
        let lo = c * ENCODE_BATCH;
        values
            .slice_mut(s![lo..lo + part.nrows(), ..])
            .assign(&part.mapv(f64::from));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("encoder produced non-finite embeddings"));
    }
    Ok(EmbeddingMatrix {
        values,
        windows: ws.intervals(),
        dataset_id: ws.dataset_id.clone(),
        encoder_id: meta.id.clone(),
        w: ws.config.w,
        s: ws.config.s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Tsne,
    Umap,
    Mds,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Pca => "pca",
            Method::Tsne => "tsne",
            Method::Umap => "umap",
            Method::Mds => "mds",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Method::Pca),
            "tsne" | "t-sne" => Ok(Method::Tsne),
            "umap" => Ok(Method::Umap),
            "mds" => Ok(Method::Mds),
            other => Err(Error::invalid(format!(
                "unknown projection method {other:?} (expected pca, tsne, umap or mds)"
            ))),
        }
    }
}

/// Method hyperparameters; only the fields of the chosen method are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub method: Method,
    pub seed: u64,
    #[serde(default)]
    pub tsne: TsneConfig,
    #[serde(default)]
    pub umap: UmapConfig,
    /// Z-score embedding columns before projecting.
    #[serde(default)]
    pub zscore: bool,
}

impl ProjectionConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            seed,
            tsne: TsneConfig::default(),
            umap: UmapConfig::default(),
            zscore: false,
        }
    }

    /// The parameters that influence the chosen method.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = match self.method {
            Method::Tsne => serde_json::to_value(&self.tsne),
            Method::Umap => serde_json::to_value(&self.umap),
            Method::Pca | Method::Mds => Ok(serde_json::json!({})),
        }
        .unwrap_or_default();
        if let Some(m) = v.as_object_mut() {
            m.insert("zscore".into(), self.zscore.into());
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub method: Method,
    pub seed: u64,
    pub config: serde_json::Value,
    pub points: Vec<[f64; 2]>,
    pub windows: Vec<WindowSpan>,
    /// Non-fatal conditions such as a rank-deficient input.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ProjectionResult {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.points.len(), 2), |(i, j)| self.points[i][j])
    }
}

pub(crate) fn to_points(y: ArrayView2<'_, f64>) -> Vec<[f64; 2]> {
    y.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

/// Project an embedding matrix with the configured method. MDS here runs on
/// the embeddings; use [`project_mds`] for raw windows.
pub fn project(e: &EmbeddingMatrix, cfg: &ProjectionConfig) -> Result<ProjectionResult> {
    let mut cfg = cfg.clone();
    cfg.umap.epochs = Some(cfg.umap.epochs_for(e.len()));
    let cfg = &cfg;
    let zs;
    let src = if cfg.zscore {
        zs = e.zscored();
        &zs
    } else {
        e
    };
    let x = src.values.view();
    let mut warnings = Vec::new();
    let y = match cfg.method {
        Method::Pca => {
            let p = pca(x, 2)?;
            if p.rank_deficient {
                warnings.push("input has rank < 2; second coordinate is zero".to_string());
            }
            p.scores
        }
        Method::Tsne => tsne(x, &cfg.tsne, cfg.seed)?.points,
        Method::Umap => umap(x, &cfg.umap, cfg.seed)?,
        Method::Mds => project_mds(x)?,
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{} produced non-finite coordinates", cfg.method)));
    }
    Ok(ProjectionResult {
        method: cfg.method,
        seed: cfg.seed,
        config: cfg.echo(),
        points: to_points(y.view()),
        windows: e
            .windows
            .iter()
            .map(|&(start, end)| WindowSpan { start, end })
            .collect(),
        warnings,
    })
}

/// Squared Euclidean distances between all rows.
pub fn sq_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let v: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Flip each column so its largest-magnitude entry is positive.
pub(crate) fn fix_signs(cols: &mut Array2<f64>) {
    for mut c in cols.axis_iter_mut(Axis(1)) {
        let big = c
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            c.mapv_inplace(|v| -v);
        }
    }
}
