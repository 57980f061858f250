//! `wallnet` command-line driver.
//!
//! Every subcommand writes its artifacts atomically under an output
//! directory together with `run-log.json` (configuration echo, timings and
//! a metric summary). Exit status: 0 on success, 2 for usage errors, 1 when
//! the pipeline fails.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use wallnet_core::dataset::{self, write_atomic, DatasetManifest, Split};
use wallnet_core::{ingest, AmplitudeScaling, ProfileKind, Sample, SimConfig};
use wallnet_models::eval::{self, raster_csv, raster_pgm, EvalReport, ModelKey};
use wallnet_models::train::{self, TrainConfig};
use wallnet_models::{Architecture, TrainedModel};

/// Seed used by every stochastic stage unless `--seed` says otherwise.
pub const DEFAULT_SEED: u64 = 7;
/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "WALLNET_OUT";
pub const RUN_LOG: &str = "run-log.json";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Parser)]
#[command(name = "wallnet", version, about = "Wall permittivity/conductivity reconstruction from scattered fields")]
pub struct Cli {
    /// Default output root for subcommands run without --out
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "wallnet-out")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate all 867 wall cases into a dataset directory
    GenDataset(GenArgs),
    /// Train one model (one architecture, one profile kind)
    Train(TrainArgs),
    /// Evaluate a directory of trained models and write report tables
    Evaluate(EvalArgs),
    /// Reconstruct profiles for dataset cases with one model
    Infer(InferArgs),
    /// Turn a measured VNA session into features and reconstructions
    Ingest(IngestArgs),
    /// Write truth/reconstruction heatmaps for dataset cases
    Plot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Output dataset directory [default: <out-root>/dataset]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (count)
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Only simulate the first N cases (count), for smoke runs
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Architecture: fcnn, cnn or gan
    #[arg(long)]
    pub arch: Architecture,
    /// Profile kind: dielectric or conductivity
    #[arg(long)]
    pub profile: ProfileKind,
    /// Dataset directory written by gen-dataset
    #[arg(long)]
    pub dataset: PathBuf,
    /// Train,validation,test shares in percent
    #[arg(long, default_value = "90,5,5")]
    pub split: String,
    /// Seed for initialization and batch order
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Seed for the stratified split
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub split_seed: u64,
    /// Epochs (count) [default: 100 supervised, 500 GAN]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size (samples)
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Adam learning rate (dimensionless) [default: 2e-4 FC-NN/GAN, 1e-4 CNN]
    #[arg(long)]
    pub lr: Option<f64>,
    /// GAN reconstruction weight (dimensionless); 0 = adversarial loss only
    #[arg(long, default_value_t = train::DEFAULT_LAMBDA_REC)]
    pub lambda_rec: f64,
    /// Per-sample amplitude scaling before standardization: none or peak
    #[arg(long, default_value = "none", value_parser = parse_scaling)]
    pub scaling: AmplitudeScaling,
    /// Model output directory [default: <out-root>/models/<arch>-<profile>-<train%>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Directory holding <arch>-<profile>-<train%> model directories
    #[arg(long)]
    pub models: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report directory [default: <out-root>/report]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test cases per model (count) rendered as heatmaps
    #[arg(long, default_value_t = 3)]
    pub heatmaps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Model directory
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub dataset: PathBuf,
    /// Case ids to reconstruct [default: the model's test split]
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<u32>,
    /// Output directory [default: <out-root>/infer]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Session manifest (TOML) listing wall/free-space sweep files per position
    #[arg(long)]
    pub session: PathBuf,
    /// Model directories to run on the ingested features
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// DFT bin spacing of the training data (Hz) [default: from the simulation defaults]
    #[arg(long)]
    pub bin_spacing: Option<f64>,
    /// Output directory [default: <out-root>/ingest]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// Directory holding <arch>-<profile>-<train%> model directories
    #[arg(long)]
    pub models: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub dataset: PathBuf,
    /// Case ids to plot
    #[arg(long, value_delimiter = ',', required = true)]
    pub cases: Vec<u32>,
    /// Output directory [default: <out-root>/plots]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_scaling(s: &str) -> Result<AmplitudeScaling, String> {
    match s {
        "none" => Ok(AmplitudeScaling::None),
        "peak" => Ok(AmplitudeScaling::PeakMagnitude),
        _ => Err(format!("unknown scaling '{s}' (expected none or peak)")),
    }
}

/// Parses `"90,5,5"` into fractions.
pub fn parse_split(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("split share '{p}' is not a number")))
        .collect::<Result<_>>()?;
    let [a, b, c] = parts[..] else { bail!("--split needs three comma-separated percentages, got '{s}'") };
    if (a + b + c - 100.0).abs() > 1e-9 {
        bail!("--split shares must add up to 100, got {}", a + b + c);
    }
    Ok((a / 100.0, b / 100.0, c / 100.0))
}

/// Split used for a training share: the remainder divided evenly between
/// validation and test.
pub fn fractions_for(train_pct: u32) -> (f64, f64, f64) {
    let t = train_pct as f64 / 100.0;
    let rest = (100 - train_pct) as f64 / 200.0;
    (t, rest, rest)
}

pub fn model_dir_name(arch: Architecture, kind: ProfileKind, train_pct: u32) -> String {
    format!("{arch}-{kind}-{train_pct}")
}

/// Split plus the dataset it indexes, stored next to each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub dataset_digest: String,
    pub split: Split,
}

/// SHA-256 over the manifest and every sample blob.
pub fn dataset_digest(dir: &Path, manifest: &DatasetManifest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(dir.join(dataset::MANIFEST_FILE)).context("reading dataset manifest")?);
    let mut files: Vec<&str> = manifest.samples.iter().map(|e| e.file.as_str()).collect();
    files.dedup();
    for f in files {
        h.update(fs::read(dir.join(f)).with_context(|| format!("reading {f}"))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn out_dir(explicit: &Option<PathBuf>, root: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| root.join(default))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_run_log(dir: &Path, command: &str, args: &impl Serialize, started: Instant, metrics: Value) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let log = json!({
        "command": command,
        "config": args,
        "seconds": started.elapsed().as_secs_f64(),
        "metrics": metrics,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&dir.join(RUN_LOG), &log)
}

/// Parses `argv` and runs the subcommand; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let root = &cli.out_root;
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(a, root),
        Command::Train(a) => train_cmd(a, root),
        Command::Evaluate(a) => evaluate_cmd(a, root),
        Command::Infer(a) => infer_cmd(a, root),
        Command::Ingest(a) => ingest_cmd(a, root),
        Command::Plot(a) => plot_cmd(a, root),
    }
}

fn gen_dataset(a: &GenArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(&a.out, root, "dataset");
    let cfg = SimConfig::default();
    let mut cases = wallnet_core::scene::enumerate_cases();
    if let Some(n) = a.limit {
        cases.truncate(n);
    }
    let total = cases.len();
    let progress = |done: usize, _total: usize| {
        if done % 50 == 0 || done == total {
            eprintln!("simulated {done}/{total} cases ({:.0} s)", started.elapsed().as_secs_f64());
        }
    };
    let manifest = dataset::generate_subset(&cfg, &cases, &out, a.workers, progress)?;
    let mut counts = BTreeMap::new();
    for t in manifest.wall_types() {
        *counts.entry(t.number()).or_insert(0usize) += 1;
    }
    let digest = dataset_digest(&out, &manifest)?;
    eprintln!("wrote {} samples to {}", manifest.samples.len(), out.display());
    write_run_log(
        &out,
        "gen-dataset",
        a,
        started,
        json!({ "samples": manifest.samples.len(), "per_type": counts, "digest": digest }),
    )
}

/// Loads a dataset and checks that it is complete.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    dataset::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

/// Trains one model for `cfg` on the split described by `fractions`.
pub fn train_model(
    dir: &Path,
    manifest: &DatasetManifest,
    samples: &[Sample],
    cfg: &TrainConfig,
    fractions: (f64, f64, f64),
    split_seed: u64,
) -> Result<(TrainedModel, SplitRecord)> {
    let split = dataset::split(manifest, fractions, split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    let mut last = Instant::now();
    let total = cfg.epochs;
    let mut report = |epoch: usize, _: &_| {
        if last.elapsed().as_secs_f64() > 30.0 || epoch + 1 == total {
            eprintln!("epoch {}/{total}", epoch + 1);
            last = Instant::now();
        }
    };
    let model = train::train(cfg, &pick(&split.train), &pick(&split.validation), Some(&mut report))?;
    Ok((model, SplitRecord { dataset_digest: dataset_digest(dir, manifest)?, split }))
}

/// Writes a trained model and its split record into `out`.
pub fn save_model(out: &Path, model: &TrainedModel, split: &SplitRecord) -> Result<()> {
    model.save(out)?;
    write_json(&out.join(SPLIT_FILE), split)
}

pub fn load_split(model_dir: &Path) -> Result<SplitRecord> {
    let p = model_dir.join(SPLIT_FILE);
    let text = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", p.display()))
}

fn train_cmd(a: &TrainArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let fractions = parse_split(&a.split)?;
    let train_pct = (fractions.0 * 100.0).round() as u32;
    let out = out_dir(&a.out, root, &format!("models/{}", model_dir_name(a.arch, a.profile, train_pct)));
    let (manifest, samples) = load_dataset(&a.dataset)?;
    let mut cfg = TrainConfig::new(a.arch, a.profile);
    cfg.seed = a.seed;
    cfg.batch_size = a.batch_size;
    cfg.lambda_rec = a.lambda_rec;
    cfg.scaling = a.scaling;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    let (model, split) = train_model(&a.dataset, &manifest, &samples, &cfg, fractions, a.split_seed)?;
    save_model(&out, &model, &split)?;
    let test: Vec<&Sample> = split.split.test.iter().map(|&i| &samples[i]).collect();
    let key = ModelKey { arch: a.arch, kind: a.profile, train_pct };
    let ev = eval::evaluate_model(key, &model, &test)?;
    eprintln!("{key}: test NMSE {:.4} ({:.1} min)", ev.mean_nmse, model.train_seconds / 60.0);
    write_run_log(
        &out,
        "train",
        a,
        started,
        json!({ "test_nmse": ev.mean_nmse, "train_minutes": model.train_seconds / 60.0, "epochs": model.record.len() }),
    )
}

/// Loads every `<arch>-<profile>-<pct>` model directory under `dir`.
pub fn load_models(dir: &Path) -> Result<BTreeMap<ModelKey, (TrainedModel, SplitRecord)>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let parts: Vec<&str> = name.split('-').collect();
        let [arch, kind, pct] = parts[..] else { continue };
        let (Ok(arch), Ok(kind), Ok(pct)) = (arch.parse(), kind.parse(), pct.parse()) else { continue };
        if !path.join(wallnet_models::model::MODEL_MANIFEST).exists() {
            continue;
        }
        let model = TrainedModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
        out.insert(ModelKey { arch, kind, train_pct: pct }, (model, load_split(&path)?));
    }
    Ok(out)
}

/// Builds the report for a set of models, checking that each split indexes
/// this dataset.
pub fn report_for(
    models: &BTreeMap<ModelKey, (TrainedModel, SplitRecord)>,
    samples: &[Sample],
    digest: &str,
) -> Result<EvalReport> {
    let mut splits = BTreeMap::new();
    let mut nets = BTreeMap::new();
    for (key, (model, rec)) in models {
        if rec.dataset_digest != digest {
            bail!("model {key} was trained on a different dataset ({} vs {digest})", rec.dataset_digest);
        }
        if let Some(prev) = splits.insert(key.train_pct, rec.split.clone()) {
            if prev != rec.split {
                bail!("models at {}% training data use different splits", key.train_pct);
            }
        }
        nets.insert(*key, model.clone());
    }
    Ok(eval::build_report(&nets, samples, &splits)?)
}

fn write_heatmaps(dir: &Path, stem: &str, raster: &wallnet_core::ProfileRaster) -> Result<()> {
    fs::create_dir_all(dir)?;
    let pgm = dir.join(format!("{stem}.pgm"));
    write_atomic(&pgm, &raster_pgm(raster)).with_context(|| format!("writing {}", pgm.display()))?;
    let csv = dir.join(format!("{stem}.csv"));
    write_atomic(&csv, raster_csv(raster).as_bytes()).with_context(|| format!("writing {}", csv.display()))
}

fn evaluate_cmd(a: &EvalArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(&a.out, root, "report");
    let (manifest, samples) = load_dataset(&a.dataset)?;
    let digest = dataset_digest(&a.dataset, &manifest)?;
    let models = load_models(&a.models)?;
    let report = report_for(&models, &samples, &digest)?;
    report.write(&out)?;
    for (key, (model, rec)) in &models {
        for &i in rec.split.test.iter().take(a.heatmaps) {
            let s = &samples[i];
            let dir = out.join("heatmaps").join(key.to_string().replace(['/', '@', '%'], "_"));
            write_heatmaps(&dir, &format!("case{}_truth", s.case_id().0), s.label(key.kind))?;
            write_heatmaps(&dir, &format!("case{}_estimate", s.case_id().0), &model.predict(&s.features)?)?;
        }
    }
    print!("{}", report.to_text());
    let summary: BTreeMap<String, f64> = report.models.iter().map(|m| (m.key.to_string(), m.mean_nmse)).collect();
    write_run_log(&out, "evaluate", a, started, json!({ "mean_nmse": summary }))
}

fn infer_cmd(a: &InferArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(&a.out, root, "infer");
    let model = TrainedModel::load(&a.model)?;
    let (_, samples) = load_dataset(&a.dataset)?;
    let cases: Vec<usize> = if a.cases.is_empty() {
        load_split(&a.model)?.split.test
    } else {
        a.cases.iter().map(|&c| c as usize).collect()
    };
    let mut rows = Vec::new();
    for &c in &cases {
        let s = samples.get(c).with_context(|| format!("case {c} is not in the dataset"))?;
        let start = Instant::now();
        let est = model.predict(&s.features)?;
        let seconds = start.elapsed().as_secs_f64();
        let nmse = eval::raster_nmse(s.label(model.kind), &est, false)?;
        write_heatmaps(&out, &format!("case{c}_{}", model.kind), &est)?;
        let phys = wallnet_models::model::denormalize(&est);
        rows.push(json!({ "case": c, "nmse": nmse, "seconds": seconds, "physical_mean": phys.iter().sum::<f64>() / phys.len() as f64 }));
    }
    write_run_log(&out, "infer", a, started, json!({ "cases": rows }))
}

fn ingest_cmd(a: &IngestArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(&a.out, root, "ingest");
    let spacing = a.bin_spacing.unwrap_or_else(|| SimConfig::default().bin_spacing());
    let session = ingest::load_session(&a.session)?;
    let features = ingest::session_to_features(&session, spacing)?;
    fs::create_dir_all(&out)?;
    let line: Vec<String> = features.as_slice().iter().map(|v| format!("{v:?}")).collect();
    let fpath = out.join("features.csv");
    write_atomic(&fpath, format!("{}\n", line.join(",")).as_bytes())?;
    let mut results = Vec::new();
    for m in &a.models {
        let model = TrainedModel::load(m)?;
        let est = model.predict(&features)?;
        let stem = format!("{}_{}", model.arch, model.kind);
        write_heatmaps(&out, &stem, &est)?;
        let thickness = (model.kind == ProfileKind::Dielectric).then(|| eval::estimate_thickness(&est));
        results.push(json!({ "model": m, "raster": stem, "thickness": thickness }));
    }
    write_run_log(&out, "ingest", a, started, json!({ "session": session.id, "predictions": results }))
}

fn plot_cmd(a: &PlotArgs, root: &Path) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(&a.out, root, "plots");
    let (_, samples) = load_dataset(&a.dataset)?;
    let models = load_models(&a.models)?;
    let mut written = 0;
    for &c in &a.cases {
        let s = samples.get(c as usize).with_context(|| format!("case {c} is not in the dataset"))?;
        for kind in ProfileKind::ALL {
            write_heatmaps(&out, &format!("case{c}_{kind}_truth"), s.label(kind))?;
            written += 1;
        }
        for (key, (model, _)) in &models {
            let est = model.predict(&s.features)?;
            write_heatmaps(&out, &format!("case{c}_{}_{}_{}", key.kind, key.arch, key.train_pct), &est)?;
            written += 1;
        }
    }
    write_run_log(&out, "plot", a, started, json!({ "heatmaps": written }))
}
