//! Seeded end-to-end scenarios: generate, train, embed, project, score.

pub mod oracles;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datastore::{
    slide_windows, ArtifactStore, EncoderArtifact, EncoderMeta, GroundTruth, Region, TimeSeriesDataset,
    WindowConfig,
};
use crate::insights::{
    analyze, anomaly_scores, cluster_segments, motif_rank, percentile, percentile_rank, score_ranks,
    windows_overlapping, AnalysisInput, AnalysisOptions, AnalysisReport, MotifMetric,
};
use crate::masking::{MaskConfig, DEFAULT_LM};
use crate::model::Arch;
use crate::projector::{
    encode_windows, flatten_windows, project, project_mds, EmbeddingMatrix, Method, ProjectionConfig,
    ProjectionResult, WindowSpan,
};
use crate::synthgen::{gen_mtoy, gen_preset, Preset, MTOY_LENGTH, MTOY_MOTIF_LEN};
use crate::trainer::{default_encoder_id, train, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    S1Segmentation,
    S2Anomaly,
    MtoyMotif,
    S4Online,
    VarwinStudy,
    BaselinesMtoy,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::S1Segmentation,
        Scenario::S2Anomaly,
        Scenario::MtoyMotif,
        Scenario::S4Online,
        Scenario::VarwinStudy,
        Scenario::BaselinesMtoy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::S1Segmentation => "s1_segmentation",
            Scenario::S2Anomaly => "s2_anomaly",
            Scenario::MtoyMotif => "mtoy_motif",
            Scenario::S4Online => "s4_online",
            Scenario::VarwinStudy => "varwin_study",
            Scenario::BaselinesMtoy => "baselines_mtoy",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|x| x.name()).collect();
                Error::invalid(format!("unknown scenario {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::invalid(format!("unknown scale {other:?} (expected desk or paper)"))),
        }
    }
}

impl Scale {
    /// Aggregation applied to minute-resolution presets.
    pub fn resample(self) -> usize {
        match self {
            Scale::Desk => 10,
            Scale::Paper => 1,
        }
    }
}

/// Epochs used at desk scale, per training recipe.
pub const DESK_EPOCHS_S1: usize = 20;
pub const DESK_EPOCHS_S2: usize = 30;
pub const DESK_EPOCHS_MTOY: usize = 50;
pub const DESK_EPOCHS_S4: usize = 30;

/// Training recipes.
pub mod recipes {
    use super::*;

    fn with(mut c: TrainConfig, batch: usize, epochs: usize, seed: u64) -> TrainConfig {
        c.batch_size = batch;
        c.epochs = epochs;
        c.seed = seed;
        c
    }

    fn epochs(scale: Scale, paper: usize, desk: usize) -> usize {
        match scale {
            Scale::Desk => desk,
            Scale::Paper => paper,
        }
    }

    pub fn s1(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::new(36, 72, MaskConfig::stateful(0.4, DEFAULT_LM));
        with(c, 16, epochs(scale, 200, DESK_EPOCHS_S1), seed)
    }

    pub fn s1_fixed(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::fixed(72, MaskConfig::stateful(0.4, DEFAULT_LM));
        with(c, 16, epochs(scale, 200, DESK_EPOCHS_S1), seed)
    }

    pub fn s2(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::new(24, 48, MaskConfig::stateless(0.5));
        with(c, 32, epochs(scale, 200, DESK_EPOCHS_S2), seed)
    }

    pub fn s3(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::new(32, 96, MaskConfig::future(0.4));
        with(c, 32, epochs(scale, 200, DESK_EPOCHS_S2), seed)
    }

    pub fn mtoy(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::fixed(30, MaskConfig::stateful(0.7, DEFAULT_LM));
        with(c, 32, epochs(scale, 50, DESK_EPOCHS_MTOY), seed)
    }

    pub fn mtoy_dcae(scale: Scale, seed: u64) -> TrainConfig {
        let mut c = mtoy(scale, seed);
        c.arch = Arch::Dcae;
        c
    }

    pub fn s4(scale: Scale, seed: u64) -> TrainConfig {
        let c = TrainConfig::new(30, 60, MaskConfig::stateless(0.5));
        with(c, 32, epochs(scale, 200, DESK_EPOCHS_S4), seed)
    }
}

/// Visual-analytics window settings per dataset.
pub mod va {
    pub const S1: (usize, usize) = (54, 2);
    pub const S2: (usize, usize) = (28, 2);
    pub const MTOY: (usize, usize) = (30, 5);
    pub const S4: (usize, usize) = (33, 3);
    pub const VARWIN: [usize; 5] = [36, 45, 54, 63, 72];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_least(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
            detail,
        }
    }

    fn below(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value < threshold,
            value,
            threshold,
            detail,
        }
    }

    fn flag(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w: usize,
    pub n_windows: usize,
    pub silhouette: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub scale: Scale,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub encoders: Vec<EncoderMeta>,
    pub training: Vec<TrainReport>,
    pub analyses: Vec<AnalysisReport>,
    /// Scenario-specific numbers.
    pub details: serde_json::Value,
    pub wall_time_s: f64,
}

/// Where to cache encoders and how far to shorten training.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub store: Option<ArtifactStore>,
    /// Overrides the recipe's epoch count.
    pub epochs: Option<usize>,
    pub max_batches_per_epoch: Option<usize>,
}

/// Training inputs that must agree for a stored encoder to be reused.
fn same_recipe(meta: &EncoderMeta, cfg: &TrainConfig, in_vars: usize) -> bool {
    meta.arch == cfg.arch
        && meta.in_vars == in_vars
        && meta.w == cfg.w
        && meta.w_min == cfg.w_min
        && meta.w_max == cfg.w_max
        && meta.mask == cfg.mask
        && meta.norm_mode == cfg.norm_mode
        && meta.epochs == cfg.epochs
        && meta.batch_size == cfg.batch_size
        && meta.learning_rate == cfg.learning_rate
        && meta.seed == cfg.seed
        && meta.n_modules == cfg.n_modules
        && meta.filters == cfg.branch_filters
}

struct Session<'a> {
    opts: &'a RunOptions,
    encoders: Vec<EncoderMeta>,
    training: Vec<TrainReport>,
}

impl<'a> Session<'a> {
    fn new(opts: &'a RunOptions) -> Self {
        Self {
            opts,
            encoders: Vec::new(),
            training: Vec::new(),
        }
    }

    fn encoder(&mut self, ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<EncoderArtifact> {
        let mut cfg = cfg.clone();
        if let Some(e) = self.opts.epochs {
            cfg.epochs = e;
        }
        cfg.max_batches_per_epoch = self.opts.max_batches_per_epoch;
        let mut id = default_encoder_id(ds, &cfg);
        if let Some(m) = cfg.max_batches_per_epoch {
            id.push_str(&format!("-b{m}"));
        }
        if let Some(store) = &self.opts.store {
            if let Ok(meta) = store.encoder_meta(&id) {
                if same_recipe(&meta, &cfg, ds.n_vars()) {
                    let art = store.load_encoder(&id)?;
                    if let Some(rep) = store.encoder_report::<TrainReport>(&id)? {
                        self.training.push(rep);
                    }
                    self.encoders.push(art.meta.clone());
                    return Ok(art);
                }
            }
        }
        log::info!("training {id}");
        let (art, rep) = train(ds, &cfg, Some(&id))?;
        if let Some(store) = &self.opts.store {
            store.save_encoder(&art, Some(&rep))?;
        }
        self.encoders.push(art.meta.clone());
        self.training.push(rep);
        Ok(art)
    }

    fn finish(self, scenario: Scenario, seed: u64, scale: Scale, started: Instant, parts: Parts) -> ScenarioReport {
        ScenarioReport {
            scenario,
            seed,
            scale,
            passed: parts.checks.iter().all(|c| c.passed),
            checks: parts.checks,
            encoders: self.encoders,
            training: self.training,
            analyses: parts.analyses,
            details: parts.details,
            wall_time_s: started.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Default)]
struct Parts {
    checks: Vec<Check>,
    analyses: Vec<AnalysisReport>,
    details: serde_json::Value,
}

fn preset(p: Preset, seed: u64, scale: Scale) -> Result<(TimeSeriesDataset, GroundTruth)> {
    let (ds, truth) = gen_preset(p, seed)?;
    let f = scale.resample();
    Ok((ds.resample(f)?, truth.rescale(f)))
}

fn embed(art: &EncoderArtifact, ds: &TimeSeriesDataset, (w, s): (usize, usize), region: Region) -> Result<EmbeddingMatrix> {
    encode_windows(art, &slide_windows(ds, WindowConfig::new(w, s), region)?)
}

fn projection(e: &EmbeddingMatrix, seed: u64) -> Result<ProjectionResult> {
    project(e, &ProjectionConfig::new(Method::Umap, seed))
}

fn analysis(
    ds: &TimeSeriesDataset,
    e: &EmbeddingMatrix,
    proj: &ProjectionResult,
    truth: Option<&GroundTruth>,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    analyze(
        &AnalysisInput {
            dataset: &ds.id,
            encoder: &e.encoder_id,
            w: e.w,
            s: e.s,
            series_len: ds.len(),
            projection: proj,
            embeddings: Some(e.values.view()),
            truth,
        },
        opts,
    )
}

/// Embed at each `w`, project, and score 3-means cluster quality.
pub fn varwin_sweep(
    art: &EncoderArtifact,
    ds: &TimeSeriesDataset,
    w_values: &[usize],
    s: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    for &w in w_values {
        art.meta.check_window(w)?;
    }
    w_values
        .iter()
        .map(|&w| {
            let e = embed(art, ds, (w, s), Region::All)?;
            let proj = projection(&e, seed)?;
            let c = cluster_segments(&proj, 3, seed, ds.len())?;
            Ok(SweepPoint {
                w,
                n_windows: e.len(),
                silhouette: c.silhouette,
            })
        })
        .collect()
}

fn s1_segmentation(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let (ds, truth) = preset(Preset::S1, seed, scale)?;
    let art = sess.encoder(&ds, &recipes::s1(scale, seed))?;
    let e = embed(&art, &ds, va::S1, Region::All)?;
    let proj = projection(&e, seed)?;
    let opts = AnalysisOptions {
        seed,
        merge_segments: vec![(2, 0)],
        ..AnalysisOptions::default()
    };
    let rep = analysis(&ds, &e, &proj, Some(&truth), &opts)?;
    let w = va::S1.0;
    let ari = rep.metrics.ari.unwrap_or(f64::NAN);
    let mut checks = vec![Check::at_least(
        "ari_merged_truth",
        ari,
        0.6,
        "3-means per-step labels vs truth with segments 1 and 3 merged".into(),
    )];
    let mut hits = Vec::new();
    for g in &rep.gaps {
        let hit = truth.changepoints.iter().copied().find(|&c| g.near(c, w));
        hits.push(serde_json::json!({"rank": g.rank, "span": g.span(), "changepoint": hit}));
        checks.push(Check::flag(
            &format!("gap{}_near_changepoint", g.rank),
            hit.is_some(),
            format!("gap {} spans {:?}; changepoints {:?} (tolerance {w})", g.rank, g.span(), truth.changepoints),
        ));
    }
    Ok(Parts {
        checks,
        details: serde_json::json!({"ari": ari, "gaps": hits, "silhouette": rep.clusters.silhouette}),
        analyses: vec![rep],
    })
}

fn s2_anomaly(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let (ds, truth) = preset(Preset::S2, seed, scale)?;
    let art = sess.encoder(&ds, &recipes::s2(scale, seed))?;
    let e = embed(&art, &ds, va::S2, Region::All)?;
    let proj = projection(&e, seed)?;
    let rep = analysis(&ds, &e, &proj, Some(&truth), &AnalysisOptions { seed, ..Default::default() })?;
    let scores = anomaly_scores(&proj.points, crate::insights::DEFAULT_ANOMALY_K)?;
    let p95 = percentile(&scores, 95.0);
    let hit = windows_overlapping(&proj.windows, &truth.anomaly_intervals);
    let ranks: Vec<f64> = hit.iter().map(|&i| percentile_rank(scores[i], &scores)).collect();
    let worst = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    let above = hit.iter().filter(|&&i| scores[i] > p95).count();
    Ok(Parts {
        checks: vec![Check::at_least(
            "anomalous_windows_above_p95",
            above as f64,
            hit.len() as f64,
            format!(
                "{above}/{} windows overlapping {:?} score above the 95th percentile ({p95:.4}); lowest percentile rank {worst:.1}",
                hit.len(),
                truth.anomaly_intervals
            ),
        )],
        details: serde_json::json!({
            "p95": p95,
            "n_anomalous_windows": hit.len(),
            "n_above": above,
            "min_percentile_rank": worst,
        }),
        analyses: vec![rep],
    })
}

struct MotifRun {
    metric: MotifMetric,
    space: &'static str,
}

fn motif_runs(seed: u64, scale: Scale, sess: &mut Session<'_>, with_mds: bool) -> Result<Vec<MotifRun>> {
    let (ds, truth) = gen_mtoy(seed, MTOY_LENGTH, MTOY_MOTIF_LEN)?;
    let ws = slide_windows(&ds, WindowConfig::new(va::MTOY.0, va::MTOY.1), Region::All)?;
    let spans: Vec<WindowSpan> = ws.intervals().into_iter().map(|(start, end)| WindowSpan { start, end }).collect();
    let mut out = Vec::new();
    for (cfg, space) in [(recipes::mtoy(scale, seed), "mtsae"), (recipes::mtoy_dcae(scale, seed), "dcae")] {
        let art = sess.encoder(&ds, &cfg)?;
        let e = encode_windows(&art, &ws)?;
        out.push(MotifRun {
            metric: motif_rank(e.values.view(), &spans, &truth, 1000, seed)?,
            space,
        });
    }
    if with_mds {
        let y = project_mds(flatten_windows(&ws).view())?;
        out.push(MotifRun {
            metric: motif_rank(y.view(), &spans, &truth, 1000, seed)?,
            space: "mds",
        });
    }
    Ok(out)
}

fn motif_checks(runs: &[MotifRun]) -> Vec<Check> {
    runs.iter()
        .filter(|r| r.space != "mds")
        .map(|r| {
            let detail = format!(
                "{} motif pair {:?} distance {:.4} at percentile {:.1} of {} random pairs",
                r.space, r.metric.windows, r.metric.distance, r.metric.percentile, r.metric.n_pairs
            );
            if r.space == "mtsae" {
                Check::below("mtsae_motif_below_p10", r.metric.percentile, 10.0, detail)
            } else {
                Check::at_least("dcae_motif_not_below_p10", r.metric.percentile, 10.0, detail)
            }
        })
        .collect()
}

fn motif_details(runs: &[MotifRun]) -> serde_json::Value {
    serde_json::Value::Object(
        runs.iter()
            .map(|r| (r.space.to_string(), serde_json::to_value(&r.metric).unwrap_or_default()))
            .collect(),
    )
}

fn mtoy_motif(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let runs = motif_runs(seed, scale, sess, false)?;
    Ok(Parts {
        checks: motif_checks(&runs),
        details: motif_details(&runs),
        analyses: vec![],
    })
}

fn baselines_mtoy(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let runs = motif_runs(seed, scale, sess, true)?;
    Ok(Parts {
        checks: motif_checks(&runs),
        details: motif_details(&runs),
        analyses: vec![],
    })
}

fn s4_online(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let (ds, truth) = preset(Preset::S4, seed, scale)?;
    let ds = ds.with_split_fraction(0.8)?;
    let art = sess.encoder(&ds, &recipes::s4(scale, seed))?;
    let e = embed(&art, &ds, va::S4, Region::Test)?;
    let proj = projection(&e, seed)?;
    let rep = analysis(&ds, &e, &proj, Some(&truth), &AnalysisOptions { seed, ..Default::default() })?;
    let scores = anomaly_scores(&proj.points, crate::insights::DEFAULT_ANOMALY_K)?;
    let ranks = score_ranks(&scores);
    let hit = windows_overlapping(&proj.windows, &truth.anomaly_intervals);
    let mut top: Vec<usize> = (0..scores.len()).filter(|&i| ranks[i] <= 3).collect();
    top.sort_by_key(|&i| ranks[i]);
    let n_top_hits = top.iter().filter(|i| hit.contains(i)).count();
    let top_spans: Vec<WindowSpan> = top.iter().map(|&i| proj.windows[i]).collect();
    Ok(Parts {
        checks: vec![Check::at_least(
            "disturbance_in_top3",
            n_top_hits as f64,
            3.0,
            format!(
                "top-3 windows {:?}; disturbance {:?}; split at {}",
                top_spans,
                truth.anomaly_intervals,
                ds.split_point.unwrap_or(0)
            ),
        )],
        details: serde_json::json!({
            "top3": top_spans,
            "n_test_windows": e.len(),
            "n_disturbance_windows": hit.len(),
        }),
        analyses: vec![rep],
    })
}

fn varwin_study(seed: u64, scale: Scale, sess: &mut Session<'_>) -> Result<Parts> {
    let (ds, _) = preset(Preset::S1, seed, scale)?;
    let s = va::S1.1;
    let var = sess.encoder(&ds, &recipes::s1(scale, seed))?;
    let fixed = sess.encoder(&ds, &recipes::s1_fixed(scale, seed))?;
    let var_sweep = varwin_sweep(&var, &ds, &va::VARWIN, s, seed)?;
    let fixed_sweep = varwin_sweep(&fixed, &ds, &va::VARWIN, s, seed)?;
    let var_min = var_sweep.iter().map(|p| p.silhouette).fold(f64::INFINITY, f64::min);
    let (best_w, fixed_best) = fixed_sweep
        .iter()
        .map(|p| (p.w, p.silhouette))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let ratio = var_min / fixed_best;
    Ok(Parts {
        checks: vec![Check::at_least(
            "variable_min_vs_fixed_best",
            ratio,
            0.8,
            format!("variable min silhouette {var_min:.4} vs fixed best {fixed_best:.4} (w={best_w})"),
        )],
        details: serde_json::json!({
            "variable": var_sweep,
            "fixed": fixed_sweep,
            "variable_min": var_min,
            "fixed_best": fixed_best,
            "fixed_best_w": best_w,
        }),
        analyses: vec![],
    })
}

/// Run one scenario end to end.
pub fn run_scenario(scenario: Scenario, seed: u64, scale: Scale, opts: &RunOptions) -> Result<ScenarioReport> {
    crate::runtime::tune_allocator();
    let started = Instant::now();
    let mut sess = Session::new(opts);
    let parts = match scenario {
        Scenario::S1Segmentation => s1_segmentation(seed, scale, &mut sess)?,
        Scenario::S2Anomaly => s2_anomaly(seed, scale, &mut sess)?,
        Scenario::MtoyMotif => mtoy_motif(seed, scale, &mut sess)?,
        Scenario::S4Online => s4_online(seed, scale, &mut sess)?,
        Scenario::VarwinStudy => varwin_study(seed, scale, &mut sess)?,
        Scenario::BaselinesMtoy => baselines_mtoy(seed, scale, &mut sess)?,
    };
    Ok(sess.finish(scenario, seed, scale, started, parts))
}
