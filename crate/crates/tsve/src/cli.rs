//! Command-line interface. Every subcommand works on one artifact root.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tsve_core::datastore::{ingest, read_csv, ArtifactStore, IngestOptions, NormMode, Region};
use tsve_core::experiments::{run_scenario, RunOptions, Scale, Scenario};
use tsve_core::insights::{
    analyze, anomaly_scores, motif_candidates, score_ranks, AnalysisInput, AnalysisOptions, AnalysisReport,
    MotifCandidate,
};
use tsve_core::masking::{MaskConfig, MaskMode, DEFAULT_LM};
use tsve_core::model::Arch;
use tsve_core::projector::{Method, WindowSpan};
use tsve_core::synthgen::{gen_mtoy, gen_preset, Preset, MTOY_LENGTH, MTOY_MOTIF_LEN};
use tsve_core::trainer::{default_encoder_id, train, TrainConfig};

use crate::api::{serve, ServerConfig};
use crate::pipeline::{compute, resolve, ArtifactMemo, EmbeddingRequest};

pub const DEFAULT_ARTIFACTS: &str = "artifacts";

#[derive(Debug, Parser)]
#[command(name = "tsve", version, about = "Train masked time-series autoencoders and explore their latent space")]
pub struct Cli {
    /// Artifact root (datasets and encoders).
    #[arg(long, global = true, env = "TSVE_ARTIFACTS", default_value = DEFAULT_ARTIFACTS)]
    pub artifacts: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Synth(SynthArgs),
    /// Import a CSV file as a dataset.
    Ingest(IngestArgs),
    /// Train an encoder on a stored dataset.
    Train(TrainArgs),
    /// Embed and project the windows of a dataset.
    Embed(EmbedArgs),
    /// Gaps, anomaly scores, clusters and motif candidates of a projection.
    Analyze(AnalyzeArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Run a seeded end-to-end scenario and write its report.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthPreset {
    S1,
    S2,
    S3,
    S4,
    Mtoy,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub preset: SynthPreset,
    /// Artifact root to write into; defaults to --artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Block-mean factor for the minute-resolution presets.
    #[arg(long, default_value_t = 10)]
    pub resample: usize,
    /// Training fraction; s4 defaults to 0.8.
    #[arg(long)]
    pub split: Option<f64>,
    /// Dataset id; defaults to the preset name.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub resample: Option<usize>,
}

fn parse_mask_mode(s: &str) -> Result<MaskMode, String> {
    s.parse().map_err(|e: tsve_core::Error| e.to_string())
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: tsve_core::Error| e.to_string())
}

fn parse_norm(s: &str) -> Result<NormMode, String> {
    s.parse().map_err(|e: tsve_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: tsve_core::Error| e.to_string())
}

fn parse_region(s: &str) -> Result<Region, String> {
    s.parse().map_err(|e: tsve_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, value_parser = parse_mask_mode, default_value = "stateless")]
    pub mask_mode: MaskMode,
    /// Masked fraction.
    #[arg(short = 'r', default_value_t = 0.5)]
    pub r: f64,
    /// Mean masked run length (stateful masks).
    #[arg(long, default_value_t = DEFAULT_LM)]
    pub lm: f64,
    /// One mask shared by all variables.
    #[arg(long)]
    pub sync: bool,
    #[arg(long)]
    pub wmin: usize,
    #[arg(long)]
    pub wmax: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_arch, default_value = "mtsae")]
    pub arch: Arch,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_parser = parse_norm, default_value = "dataset")]
    pub norm: NormMode,
    /// Cap on batches per epoch.
    #[arg(long)]
    pub max_batches: Option<usize>,
    /// Encoder id; defaults to one derived from the dataset and config.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub encoder: String,
    /// Window size; defaults to the encoder's w.
    #[arg(short = 'w')]
    pub w: Option<usize>,
    /// Stride; defaults to max(1, w/10).
    #[arg(short = 's')]
    pub s: Option<usize>,
    #[arg(long, value_parser = parse_method, default_value = "umap")]
    pub projection: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_region, default_value = "all")]
    pub split: Region,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Segment,
    Anomaly,
    Motif,
}

fn parse_merge(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad segment index {a:?}"))?,
        b.trim().parse().map_err(|_| format!("bad segment index {b:?}"))?,
    ))
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
    /// Clusters (segment), neighbours and reported windows (anomaly) or
    /// candidate pairs (motif).
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Treat true segments A and B as one when scoring against ground
    /// truth, e.g. `--merge 2:0`.
    #[arg(long, value_parser = parse_merge)]
    pub merge: Vec<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Artifact root; overrides --artifacts.
    #[arg(long = "artifacts", id = "serve_artifacts")]
    pub artifacts: Option<PathBuf>,
    /// Allowed CORS origin, repeatable; `*` allows any.
    #[arg(long)]
    pub cors: Vec<String>,
    /// Embedding computation timeout in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_parser = |s: &str| s.parse::<Scenario>().map_err(|e| e.to_string()))]
    pub name: Scenario,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = |s: &str| s.parse::<Scale>().map_err(|e| e.to_string()), default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the epoch count of every training run.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Keep trained encoders in the artifact root and reuse them.
    #[arg(long)]
    pub keep: bool,
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let store = ArtifactStore::new(&cli.artifacts);
    match cli.command {
        Command::Synth(a) => synth(a, &store),
        Command::Ingest(a) => ingest_file(a, &store),
        Command::Train(a) => train_encoder(a, &store),
        Command::Embed(a) => {
            let (req, _) = embed_request(&a);
            let out = compute_request(&store, &req)?;
            write_json(a.out.as_deref(), &out.response)
        }
        Command::Analyze(a) => run_analysis(a, &store),
        Command::Serve(a) => {
            let root = a.artifacts.clone().unwrap_or(cli.artifacts);
            let mut cfg = ServerConfig::new(ArtifactStore::new(root));
            cfg.cors_origins = a.cors;
            cfg.timeout = Duration::from_secs(a.timeout);
            let addr = SocketAddr::new(a.host, a.port);
            tokio::runtime::Runtime::new()?.block_on(serve(addr, cfg))
        }
        Command::Experiment(a) => experiment(a, &store),
    }
}

fn synth(a: SynthArgs, default_store: &ArtifactStore) -> anyhow::Result<()> {
    let store = a.out.as_ref().map(ArtifactStore::new).unwrap_or_else(|| default_store.clone());
    let (mut ds, truth) = match a.preset {
        SynthPreset::Mtoy => gen_mtoy(a.seed, MTOY_LENGTH, MTOY_MOTIF_LEN)?,
        p => {
            let preset = match p {
                SynthPreset::S1 => Preset::S1,
                SynthPreset::S2 => Preset::S2,
                SynthPreset::S3 => Preset::S3,
                _ => Preset::S4,
            };
            let (ds, truth) = gen_preset(preset, a.seed)?;
            (ds.resample(a.resample)?, truth.rescale(a.resample))
        }
    };
    let split = a.split.or((a.preset == SynthPreset::S4).then_some(0.8));
    if let Some(f) = split {
        ds = ds.with_split_fraction(f)?;
    }
    if let Some(id) = a.id {
        ds.id = id;
    }
    truth.validate(ds.len())?;
    let meta = store.save_dataset(&ds)?;
    store.save_truth(&meta.id, &truth)?;
    println!(
        "dataset {} ({} steps x {} vars, step {}) written to {}",
        meta.id,
        meta.length,
        meta.n_vars,
        meta.step,
        store.dataset_dir(&meta.id).display()
    );
    Ok(())
}

fn ingest_file(a: IngestArgs, store: &ArtifactStore) -> anyhow::Result<()> {
    let table = read_csv(&a.file)?;
    let opts = IngestOptions {
        name: a.name,
        resample_factor: a.resample,
        split: a.split,
        source: a.file.display().to_string(),
    };
    let ds = ingest(&table, &opts)?;
    let meta = store.save_dataset(&ds)?;
    println!("dataset {} ({} steps x {} vars)", meta.id, meta.length, meta.n_vars);
    Ok(())
}

fn train_encoder(a: TrainArgs, store: &ArtifactStore) -> anyhow::Result<()> {
    let ds = store.load_dataset(&a.dataset)?;
    let mask = match a.mask_mode {
        MaskMode::Stateless => MaskConfig::stateless(a.r),
        MaskMode::Stateful => MaskConfig::stateful(a.r, a.lm),
        MaskMode::Future => MaskConfig::future(a.r),
    }
    .with_sync(a.sync);
    let mut cfg = TrainConfig::new(a.wmin, a.wmax, mask);
    cfg.arch = a.arch;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.learning_rate = a.lr;
    cfg.norm_mode = a.norm;
    cfg.max_batches_per_epoch = a.max_batches;
    let id = a.id.unwrap_or_else(|| default_encoder_id(&ds, &cfg));
    let (art, report) = train(&ds, &cfg, Some(&id))?;
    store.save_encoder(&art, Some(&report))?;
    println!(
        "encoder {} trained for {} iterations in {:.1} s; validation loss {:.4} -> {:.4}",
        art.meta.id, report.iterations, report.wall_time_s, report.initial_val_loss, report.final_val_loss
    );
    Ok(())
}

fn embed_request(a: &EmbedArgs) -> (EmbeddingRequest, Method) {
    let req = EmbeddingRequest {
        dataset_id: a.dataset.clone(),
        encoder_id: a.encoder.clone(),
        split: a.split,
        window_size: a.w,
        stride: a.s,
        projection: Some(a.projection),
        seed: a.seed,
    };
    (req, a.projection)
}

fn compute_request(store: &ArtifactStore, req: &EmbeddingRequest) -> anyhow::Result<crate::pipeline::Computed> {
    let resolved = resolve(store, req)?;
    Ok(compute(store, &ArtifactMemo::default(), &resolved)?)
}

#[derive(Debug, Serialize)]
struct RankedWindow {
    rank: usize,
    window: WindowSpan,
    score: f64,
}

#[derive(Debug, Serialize)]
struct AnalyzeOutput {
    mode: &'static str,
    report: AnalysisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_anomalies: Option<Vec<RankedWindow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    motif_candidates: Option<Vec<MotifCandidate>>,
}

fn run_analysis(a: AnalyzeArgs, store: &ArtifactStore) -> anyhow::Result<()> {
    let (req, _) = embed_request(&a.embed);
    let c = compute_request(store, &req)?;
    let truth = store.load_truth(&c.response.dataset_id)?;
    let proj = &c.response.projection;
    let mut opts = AnalysisOptions {
        seed: a.embed.seed,
        merge_segments: a.merge.clone(),
        ..Default::default()
    };
    match (a.mode, a.k) {
        (AnalyzeMode::Segment, Some(k)) => opts.clusters = k,
        (AnalyzeMode::Anomaly, Some(k)) => opts.anomaly_k = k,
        _ => {}
    }
    let input = AnalysisInput {
        dataset: &c.response.dataset_id,
        encoder: &c.response.encoder_id,
        w: c.response.window_size,
        s: c.response.stride,
        series_len: c.dataset.len(),
        projection: proj,
        embeddings: Some(c.embeddings.values.view()),
        truth: truth.as_ref(),
    };
    let report = analyze(&input, &opts)?;
    let mut out = AnalyzeOutput {
        mode: "segment",
        report,
        top_anomalies: None,
        motif_candidates: None,
    };
    match a.mode {
        AnalyzeMode::Segment => {}
        AnalyzeMode::Anomaly => {
            out.mode = "anomaly";
            let scores = anomaly_scores(&proj.points, opts.anomaly_k)?;
            let ranks = score_ranks(&scores);
            let mut top: Vec<RankedWindow> = ranks
                .iter()
                .enumerate()
                .filter(|(_, &r)| r <= opts.anomaly_k)
                .map(|(i, &r)| RankedWindow {
                    rank: r,
                    window: proj.windows[i],
                    score: scores[i],
                })
                .collect();
            top.sort_by_key(|r| r.rank);
            out.top_anomalies = Some(top);
        }
        AnalyzeMode::Motif => {
            out.mode = "motif";
            let k = a.k.unwrap_or(5);
            out.motif_candidates = Some(motif_candidates(c.embeddings.values.view(), &proj.windows, k)?);
        }
    }
    write_json(a.embed.out.as_deref(), &out)
}

fn experiment(a: ExperimentArgs, store: &ArtifactStore) -> anyhow::Result<()> {
    let opts = RunOptions {
        store: a.keep.then(|| store.clone()),
        epochs: a.epochs,
        max_batches_per_epoch: None,
    };
    if a.epochs == Some(0) {
        bail!("--epochs must be positive");
    }
    let report = run_scenario(a.name, a.seed, a.scale, &opts)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: value {:.4}, threshold {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    write_json(a.out.as_deref(), &report)
}
