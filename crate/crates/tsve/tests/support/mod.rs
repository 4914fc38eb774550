#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ndarray::Array2;
use serde_json::Value;
use tower::ServiceExt;
use tsve_core::datastore::{ArtifactStore, TimeSeriesDataset};
use tsve_core::masking::MaskConfig;
use tsve_core::trainer::{train, TrainConfig};

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {:?}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, body: &Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

/// Two smooth variables, 400 steps, split at 320.
pub fn small_dataset(id: &str) -> TimeSeriesDataset {
    let values = Array2::from_shape_fn((400, 2), |(t, j)| ((t as f64) * 0.05 * (j + 1) as f64).sin() + 0.1 * j as f64);
    let mut ds = TimeSeriesDataset::new(id, values, vec!["a".into(), "b".into()]).unwrap();
    ds.name = format!("Small {id}");
    ds.step = "1min".into();
    ds.source = "fixture".into();
    ds.with_split(320).unwrap()
}

/// An encoder with initial weights, enough for every API path.
pub fn save_untrained(store: &ArtifactStore, ds: &TimeSeriesDataset, id: &str, w_min: usize, w_max: usize) {
    let mut cfg = TrainConfig::new(w_min, w_max, MaskConfig::stateless(0.5));
    cfg.epochs = 0;
    cfg.n_modules = 3;
    let (art, report) = train(ds, &cfg, Some(id)).unwrap();
    store.save_encoder(&art, Some(&report)).unwrap();
}

/// Replace run-dependent fields so bodies can be compared with golden files.
pub fn redact(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| {
                    let r = match (k.as_str(), x) {
                        ("store", _) => Value::String("<store>".into()),
                        ("val_loss", Value::Number(_)) => Value::String("<number>".into()),
                        ("points", Value::Array(a)) => Value::String(format!("<{} points>", a.len())),
                        _ => redact(x),
                    };
                    (k.clone(), r)
                })
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(redact).collect()),
        other => other.clone(),
    }
}

/// Compare with `tests/golden/<name>.json`; `UPDATE_GOLDEN=1` rewrites it.
pub fn assert_golden(name: &str, actual: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    let actual = redact(actual);
    let text = serde_json::to_string_pretty(&actual).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(actual, want, "golden {name} differs:\n{text}");
}
