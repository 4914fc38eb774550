//! Window encoding and pairwise distances on the current pool versus a
//! single worker. Build with `--no-default-features` for the plain loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use tsve_core::datastore::{slide_windows, EncoderArtifact, Region, TimeSeriesDataset, WindowConfig, WindowSet};
use tsve_core::masking::MaskConfig;
use tsve_core::projector::{encode_windows, sq_distances};
use tsve_core::trainer::{train, TrainConfig};

fn fixture() -> (EncoderArtifact, WindowSet) {
    let values = Array2::from_shape_fn((1200, 3), |(i, j)| ((i as f64) * 0.05 * (j + 1) as f64).sin());
    let ds = TimeSeriesDataset::new("bench", values, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let mut cfg = TrainConfig::new(48, 48, MaskConfig::stateful(0.5, 3.0));
    cfg.epochs = 0;
    let art = train(&ds, &cfg, None).unwrap().0;
    let ws = slide_windows(&ds, WindowConfig::new(48, 8), Region::All).unwrap();
    (art, ws)
}

fn benches(c: &mut Criterion) {
    let (art, ws) = fixture();
    let emb = encode_windows(&art, &ws).unwrap().values;

    let mut g = c.benchmark_group("encode_windows");
    g.sample_size(10);
    let encode = || encode_windows(&art, &ws).unwrap();
    g.bench_function(if cfg!(feature = "parallel") { "pool" } else { "sequential" }, |b| {
        b.iter(|| black_box(encode()))
    });
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function("one_thread", |b| b.iter(|| one.install(|| black_box(encode()))));
    }
    g.finish();

    let mut g = c.benchmark_group("sq_distances");
    let dist = || sq_distances(emb.view());
    g.bench_function(if cfg!(feature = "parallel") { "pool" } else { "sequential" }, |b| {
        b.iter(|| black_box(dist()))
    });
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function("one_thread", |b| b.iter(|| one.install(|| black_box(dist()))));
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
