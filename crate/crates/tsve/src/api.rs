//! The HTTP API under `/api/v1`.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method as HttpMethod, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde_json::json;
use tokio::sync::OnceCell;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tsve_core::datastore::ArtifactStore;

use crate::error::ApiError;
use crate::pipeline::{
    compute, resolve, series_slice, ApiResult, ArtifactMemo, DatasetSummary, EmbeddingRequest, EncoderSummary,
    ResolvedRequest, DEFAULT_MAX_POINTS,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_CACHE_ENTRIES: usize = 64;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub store: ArtifactStore,
    pub timeout: Duration,
    pub cache_entries: usize,
    /// Allowed CORS origins; `*` allows any.
    pub cors_origins: Vec<String>,
}

impl ServerConfig {
    pub fn new(store: ArtifactStore) -> Self {
        Self {
            store,
            timeout: DEFAULT_TIMEOUT,
            cache_entries: DEFAULT_CACHE_ENTRIES,
            cors_origins: Vec::new(),
        }
    }
}

/// Serialized embedding responses keyed by the resolved request. Each
/// entry is a cell, so concurrent identical requests wait on one
/// computation. Oldest entries are evicted first.
pub struct EmbeddingCache {
    entries: Mutex<IndexMap<ResolvedRequest, Arc<OnceCell<Bytes>>>>,
    capacity: usize,
}

impl EmbeddingCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Mutex::new(IndexMap::new()),
            capacity: capacity.max(1),
        }
    }

    fn cell(&self, key: &ResolvedRequest) -> Arc<OnceCell<Bytes>> {
        let mut map = self.entries.lock().unwrap();
        if let Some(c) = map.get(key) {
            return c.clone();
        }
        let c = Arc::new(OnceCell::new());
        map.insert(key.clone(), c.clone());
        while map.len() > self.capacity {
            map.shift_remove_index(0);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct AppState {
    store: ArtifactStore,
    memo: ArtifactMemo,
    cache: EmbeddingCache,
    timeout: Duration,
}

type Shared = State<Arc<AppState>>;

pub fn router(cfg: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        store: cfg.store,
        memo: ArtifactMemo::default(),
        cache: EmbeddingCache::new(cfg.cache_entries),
        timeout: cfg.timeout,
    });
    let api = Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/series", get(series))
        .route("/encoders", get(list_encoders))
        .route("/embeddings", post(embeddings));
    let app = Router::new()
        .nest("/api/v1", api)
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state);
    match cors_layer(&cfg.cors_origins) {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([HttpMethod::GET, HttpMethod::POST, HttpMethod::OPTIONS])
            .allow_headers([header::CONTENT_TYPE]),
    )
}

pub async fn serve(addr: SocketAddr, cfg: ServerConfig) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

async fn health(State(st): Shared) -> Json<serde_json::Value> {
    let mut body = json!({
        "status": "ok",
        "version": VERSION,
        "store": st.store.root().display().to_string(),
    });
    if !st.store.exists() {
        body["warning"] = format!("artifact root {} does not exist", st.store.root().display()).into();
    }
    Json(body)
}

async fn list_datasets(State(st): Shared) -> ApiResult<Json<Vec<DatasetSummary>>> {
    let metas = st.store.list_datasets()?;
    Ok(Json(metas.iter().map(DatasetSummary::from).collect()))
}

async fn list_encoders(State(st): Shared, Query(q): Query<Vec<(String, String)>>) -> ApiResult<Json<Vec<EncoderSummary>>> {
    let dataset = q.iter().find(|(k, _)| k == "dataset_id").map(|(_, v)| v.as_str());
    let metas = st.store.list_encoders(dataset)?;
    Ok(Json(metas.iter().map(EncoderSummary::from).collect()))
}

fn parse_usize(key: &str, v: &str) -> ApiResult<usize> {
    v.trim()
        .parse()
        .map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer, got {v:?}")))
}

/// `vars` may be repeated, comma separated or written as a JSON-style list.
fn parse_vars(values: &[&str]) -> Vec<String> {
    values
        .iter()
        .flat_map(|v| v.split(','))
        .map(|v| v.trim().trim_matches(|c| matches!(c, '[' | ']' | '"' | '\'')).trim())
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect()
}

async fn series(
    State(st): Shared,
    Path(id): Path<String>,
    Query(q): Query<Vec<(String, String)>>,
) -> ApiResult<Json<crate::pipeline::SeriesSlice>> {
    let meta = st.store.dataset_meta(&id)?;
    let one = |k: &str| q.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let from = one("from").map(|v| parse_usize("from", v)).transpose()?.unwrap_or(0);
    let to = one("to").map(|v| parse_usize("to", v)).transpose()?.unwrap_or(meta.length);
    let max_points = one("max_points")
        .map(|v| parse_usize("max_points", v))
        .transpose()?
        .unwrap_or(DEFAULT_MAX_POINTS);
    let vars: Vec<&str> = q.iter().filter(|(k, _)| k == "vars").map(|(_, v)| v.as_str()).collect();
    let ds = st.memo.dataset(&st.store, &meta.id, &meta.created_at)?;
    Ok(Json(series_slice(&ds, from, to, &parse_vars(&vars), max_points)?))
}

async fn embeddings(State(st): Shared, body: Bytes) -> ApiResult<Response> {
    let req: EmbeddingRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let resolved = resolve(&st.store, &req)?;
    let cell = st.cache.cell(&resolved);
    let bytes = cell
        .get_or_try_init(|| {
            let st = st.clone();
            let key = resolved.clone();
            async move {
                let worker = st.clone();
                let job = tokio::task::spawn_blocking(move || {
                    let out = compute(&worker.store, &worker.memo, &key)?;
                    serde_json::to_vec(&out.response)
                        .map(Bytes::from)
                        .map_err(|e| ApiError::internal(e.to_string()))
                });
                match tokio::time::timeout(st.timeout, job).await {
                    Ok(Ok(r)) => r,
                    Ok(Err(e)) => Err(ApiError::internal(format!("embedding task failed: {e}"))),
                    Err(_) => Err(ApiError::timeout(format!(
                        "embedding computation exceeded {} s",
                        st.timeout.as_secs_f64()
                    ))),
                }
            }
        })
        .await?
        .clone();
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}
