use std::collections::HashSet;

use ndarray::Array3;
use tsve_core::datastore::{EncoderArtifact, TimeSeriesDataset};
use tsve_core::masking::{gen_mask, MaskConfig};
use tsve_core::model::{Adam, AdamConfig, ModelConfig, Network};
use tsve_core::synthgen::{gen_mtoy, MTOY_LENGTH, MTOY_MOTIF_LEN};
use tsve_core::trainer::{draw_len, train, train_observed, TrainConfig};

fn sine(n: usize, split: Option<usize>) -> TimeSeriesDataset {
    let v: Vec<f64> = (0..n)
        .map(|i| (i as f64 * 0.3).sin() + 0.3 * (i as f64 * 0.05).cos())
        .collect();
    let ds = TimeSeriesDataset::univariate("sine", v).unwrap();
    match split {
        Some(p) => ds.with_split(p).unwrap(),
        None => ds,
    }
}

fn small(w_min: usize, w_max: usize, mask: MaskConfig) -> TrainConfig {
    let mut c = TrainConfig::new(w_min, w_max, mask);
    c.n_modules = 1;
    c.branch_filters = 8;
    c.batch_size = 8;
    c.epochs = 2;
    c.max_batches_per_epoch = Some(6);
    c
}

#[test]
fn window_length_draws_are_uniform() {
    let mut rng = tsve_core::seeded_rng(11);
    let (lo, hi) = (36usize, 72usize);
    let k = hi - lo + 1;
    let n = 37_000;
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[draw_len(lo, hi, &mut rng) - lo] += 1;
    }
    let e = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 36 dof, p = 0.001 critical value
    assert!(chi2 < 67.99, "chi2 = {chi2}");
}

#[test]
fn overfits_one_batch() {
    let cfg = ModelConfig::mtsae(2);
    let mut rng = tsve_core::seeded_rng(0);
    let mut net = Network::init(&cfg, 48, &mut rng).unwrap();
    let x = Array3::from_shape_fn((8, 2, 48), |(b, v, t)| {
        ((t as f32 * 0.25 + b as f32) * (v as f32 + 1.0)).sin()
    });
    let mcfg = MaskConfig::stateless(0.5);
    let mut m = Array3::<f32>::zeros((8, 2, 48));
    for b in 0..8 {
        let mk = gen_mask(2, 48, &mcfg, &mut rng).unwrap();
        m.slice_mut(ndarray::s![b, .., ..]).assign(&mk.to_array::<f32>());
    }
    let mut opt = Adam::new(AdamConfig::default(), &net.params);
    let first = net.train_step(&x, &m).unwrap().loss;
    let mut last = first;
    for i in 0..300 {
        let step = net.train_step(&x, &m).unwrap();
        last = step.loss;
        if last < 0.05 * first {
            eprintln!("reached {last:.5} (from {first:.5}) after {i} iterations");
            break;
        }
        opt.update(&mut net.params, &step.grads);
        net.apply_running_updates(&step.running_updates);
    }
    assert!(last < 0.05 * first, "loss {last} vs initial {first}");
}

#[test]
fn same_seed_gives_identical_weights() {
    let ds = sine(300, None);
    let cfg = small(16, 24, MaskConfig::stateful(0.4, 3.0));
    let (a, ra) = train(&ds, &cfg, None).unwrap();
    let (b, rb) = train(&ds, &cfg, None).unwrap();
    let bytes = |e: &EncoderArtifact| tsve_core::datastore::encode_weights(&e.params);
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(ra.val_loss, rb.val_loss);
    let mut other = cfg.clone();
    other.seed = 1;
    let (c, _) = train(&ds, &other, None).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn masks_are_redrawn_and_lengths_vary() {
    let ds = sine(300, None);
    let mut cfg = small(16, 24, MaskConfig::stateless(0.5));
    cfg.epochs = 3;
    let mut masks = Vec::new();
    let mut lens = HashSet::new();
    train_observed(&ds, &cfg, None, |s| {
        masks.push(s.masks[0].bits().to_vec());
        lens.insert(s.len);
        assert!(s.len >= 16 && s.len <= 24);
        assert_eq!(s.masks.len(), s.windows.len());
    })
    .unwrap();
    let distinct: HashSet<_> = masks.iter().collect();
    assert_eq!(distinct.len(), masks.len());
    assert!(lens.len() > 3);
}

#[test]
fn validation_windows_are_never_trained_on() {
    // With a test split the last fifth of the train-region windows is held out.
    let ds = sine(300, Some(240));
    let cfg = small(12, 12, MaskConfig::stateless(0.5));
    let n = 240 - 12 + 1;
    let n_val = (0.2 * n as f64).ceil() as usize;
    let mut seen = HashSet::new();
    let (_, rep) = train_observed(&ds, &cfg, None, |s| seen.extend(s.windows.iter().copied())).unwrap();
    assert_eq!(rep.n_val_windows, n_val);
    assert!(seen.iter().all(|&i| i < n - n_val));

    // Without one they are sampled at random; a full epoch consumes every
    // other window exactly.
    let ds = sine(200, None);
    let mut cfg = small(12, 12, MaskConfig::stateless(0.5));
    cfg.max_batches_per_epoch = None;
    cfg.epochs = 1;
    let mut seen = Vec::new();
    let (_, rep) = train_observed(&ds, &cfg, None, |s| seen.extend(s.windows.iter().copied())).unwrap();
    let n = 200 - 12 + 1;
    assert_eq!(rep.n_train_windows + rep.n_val_windows, n);
    assert_eq!(seen.len(), rep.n_train_windows);
    assert_eq!(seen.iter().collect::<HashSet<_>>().len(), rep.n_train_windows);
    assert!(seen.iter().any(|&i| i >= n - rep.n_val_windows));
}

#[test]
fn mtoy_trains_to_finite_loss() {
    let (ds, _) = gen_mtoy(0, MTOY_LENGTH, MTOY_MOTIF_LEN).unwrap();
    let mut cfg = TrainConfig::fixed(30, MaskConfig::stateful(0.7, 3.0));
    cfg.epochs = 1;
    cfg.max_batches_per_epoch = Some(4);
    let (art, rep) = train(&ds, &cfg, None).unwrap();
    assert!(rep.final_val_loss.is_finite());
    assert_eq!(art.meta.in_vars, 3);
    assert_eq!(rep.val_loss.len(), 1);
}
