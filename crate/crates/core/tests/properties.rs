use ndarray::{Array2, Array3};
use proptest::prelude::*;
use tsve_core::datastore::{
    denormalize, n_windows, normalize, slide_windows, NormMode, Region, TimeSeriesDataset, WindowConfig,
};
use tsve_core::insights::{adjusted_rand_index, anomaly_scores};
use tsve_core::masking::{gen_mask, MaskConfig};
use tsve_core::model::{masked_mse, Reduction};

fn window_case() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..400).prop_flat_map(|t| (Just(t), 1..=t)).prop_flat_map(|(t, w)| (Just(t), Just(w), 1..=w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_count_matches_starts((t, w, s) in window_case()) {
        let ds = TimeSeriesDataset::univariate("p", (0..t).map(|i| i as f64).collect()).unwrap();
        let ws = slide_windows(&ds, WindowConfig::new(w, s), Region::All).unwrap();
        prop_assert_eq!(ws.len(), n_windows(t, w, s));
        prop_assert_eq!(ws.len(), (t - w) / s + 1);
        prop_assert!(ws.starts.iter().all(|&b| b % s == 0 && b + w <= t));
    }

    #[test]
    fn masked_sum_is_mean_times_count(
        vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 1..120)
    ) {
        let n = vals.len();
        let x = Array3::from_shape_fn((1, 1, n), |(_, _, i)| vals[i].0);
        let xh = Array3::from_shape_fn((1, 1, n), |(_, _, i)| vals[i].1);
        let m = Array3::from_shape_fn((1, 1, n), |(_, _, i)| if vals[i].2 { 0.0 } else { 1.0 });
        let sum = masked_mse(xh.view(), x.view(), m.view(), Reduction::Sum).unwrap();
        let mean = masked_mse(xh.view(), x.view(), m.view(), Reduction::Mean).unwrap();
        prop_assert_eq!(sum.n_masked, vals.iter().filter(|v| v.2).count());
        prop_assert!((mean.value * mean.n_masked as f64 - sum.value).abs() <= 1e-9 * sum.value.max(1.0));
        prop_assert_eq!(sum.empty_mask, sum.n_masked == 0);
    }

    #[test]
    fn future_masks_hide_the_tail(r in 0.05f64..0.95, w in 2usize..200, seed in any::<u64>()) {
        let cfg = MaskConfig::future(r);
        let m = gen_mask(3, w, &cfg, &mut tsve_core::seeded_rng(seed)).unwrap();
        let k = cfg.future_len(w);
        prop_assert!(k >= 1 && k <= w);
        for v in 0..3 {
            let row = m.row(v);
            prop_assert!(row[..w - k].iter().all(|&b| b == 1));
            prop_assert!(row[w - k..].iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn anomaly_scores_survive_rigid_motion(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 6..60),
        angle in 0.0f64..std::f64::consts::TAU,
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let (s, c) = angle.sin_cos();
        let b: Vec<[f64; 2]> = a.iter().map(|p| [c * p[0] - s * p[1] + dx, s * p[0] + c * p[1] + dy]).collect();
        let sa = anomaly_scores(&a, 5).unwrap();
        let sb = anomaly_scores(&b, 5).unwrap();
        for (u, v) in sa.iter().zip(&sb) {
            prop_assert!((u - v).abs() < 1e-9, "{} vs {}", u, v);
        }
    }

    #[test]
    fn ari_is_symmetric_and_label_free(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 2..200),
        shift in 1usize..10,
    ) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|&l| 3 * l + shift).collect();
        prop_assert!((adjusted_rand_index(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_round_trips(
        t in 20usize..120,
        w in 2usize..20,
        s in 1usize..5,
        scale in 0.1f64..100.0,
        offset in -100.0f64..100.0,
        sample in any::<bool>(),
    ) {
        prop_assume!(w <= t && s <= w);
        let values = Array2::from_shape_fn((t, 2), |(i, j)| offset + scale * ((i * (j + 2)) as f64 * 0.37).sin());
        let ds = TimeSeriesDataset::new("n", values, vec!["a".into(), "b".into()]).unwrap();
        let ws = slide_windows(&ds, WindowConfig::new(w, s), Region::All).unwrap();
        let mode = if sample { NormMode::Sample } else { NormMode::Dataset };
        let (z, stats) = normalize(&ws, mode);
        let back = denormalize(&z, &stats).unwrap();
        for (u, v) in ws.data.iter().zip(back.data.iter()) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }
}
