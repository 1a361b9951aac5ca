//! Command-line surface: cost profiling (`count`), training (`train`),
//! checkpoint evaluation (`eval`), single-axis ablation sweeps (`ablate`),
//! and synthetic-corpus generation (`synth`).
//!
//! Run directories are self-describing: the merged effective configuration
//! is always written alongside the artifacts, and `eval --run` reproduces
//! the recorded metrics from the directory contents alone. Exit codes
//! distinguish failure classes (see [`crate::error::Error::exit_code`]).

use crate::cost::{cost_report, CostReport};
use crate::datapipe::{
    augment, fit_norm, load_csv, rescue_filter, save_csv, split_subject, split_temporal,
    synth_har, synth_har_directional, window_all, AugmentConfig, Manifest, WindowSet,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, sha256_hex, ResultsFile, SeedResult};
use crate::model::{Model, ModelConfig, Pooling, Variant};
use crate::optim::{derived_seeds, evaluate, fit, TrainConfig};
use crate::presets::{self, SplitProtocol};
use crate::tensor::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Validation share held out by the fixed-subject protocol: the last
/// ceil(n/5) subjects in sorted order.
const SUBJECT_HOLDOUT_DENOM: usize = 5;

/// Train fraction used by the temporal protocol.
const TEMPORAL_TRAIN_FRAC: f64 = 0.8;

// ── Argument surface ─────────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(
    name = "babymamba",
    version,
    about = "Lightweight bidirectional selective state-space models for sensor time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the analytic parameter/MAC profile as a table plus a JSON line.
    Count(CountArgs),
    /// Train over the derived seeds and write a self-describing run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or verify every recorded metric of a run directory.
    Eval(EvalArgs),
    /// Compare config variants along one axis with shared seeds.
    Ablate(AblateArgs),
    /// Generate a synthetic labeled corpus as canonical CSV plus manifest.
    Synth(SynthArgs),
}

/// Model family selector for shape-only commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Crossover,
    Ci,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Crossover => Variant::Crossover,
            VariantArg::Ci => Variant::Ci,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Subject,
    Loso,
    Temporal,
}

impl From<ProtocolArg> for SplitProtocol {
    fn from(p: ProtocolArg) -> SplitProtocol {
        match p {
            ProtocolArg::Subject => SplitProtocol::Subject,
            ProtocolArg::Loso => SplitProtocol::Loso,
            ProtocolArg::Temporal => SplitProtocol::Temporal,
        }
    }
}

/// Ablation axes: each toggles exactly one model-config field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    #[value(name = "bidir")]
    Bidir,
    #[value(name = "pooling")]
    Pooling,
    #[value(name = "stem")]
    Stem,
    #[value(name = "d_state")]
    DState,
    #[value(name = "d_model")]
    DModel,
    #[value(name = "expand")]
    Expand,
    #[value(name = "seq_len")]
    SeqLen,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Run-config JSON file; CLI flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Take the window shape from a named benchmark preset.
    #[arg(long, value_parser = preset_names())]
    pub preset: Option<String>,
    /// Profile all benchmark shapes and their average ("benchmarks").
    #[arg(long, value_parser = ["benchmarks"])]
    pub presets: Option<String>,
    /// Model family when no config file supplies one.
    #[arg(long, value_enum, default_value = "crossover")]
    pub variant: VariantArg,
    /// Input channel count (with --classes, replaces --preset).
    #[arg(long)]
    pub channels: Option<usize>,
    /// Output class count (with --channels, replaces --preset).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Window length override.
    #[arg(long, value_name = "L")]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (JSON) describing the CSV corpus.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run-config JSON file; CLI flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to (over)write. Defaults to ./run.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of derived seeds to train.
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    /// Re-window at this length (stride becomes L/4) and size the model to match.
    #[arg(long, value_name = "L")]
    pub seq_len: Option<usize>,
    /// Epoch cap override.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory: re-derive every recorded metric and verify it.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Single model file to evaluate (needs --manifest).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset manifest; with --run, overrides the recorded manifest path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Config field to vary; everything else stays fixed.
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Dataset manifest (required unless --count-only with --preset).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Shape source for --count-only runs without data.
    #[arg(long, value_parser = preset_names())]
    pub preset: Option<String>,
    /// Run-config JSON file; CLI flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the comparison JSON (table always prints).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of derived seeds per variant (shared across variants).
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    /// Skip training: compare analytic parameter/MAC profiles only.
    #[arg(long)]
    pub count_only: bool,
    /// Window length override for the baseline.
    #[arg(long, value_name = "L")]
    pub seq_len: Option<usize>,
    /// Epoch cap override.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for corpus.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub subjects: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 6)]
    pub channels: usize,
    /// Samples per class segment in each subject's recording.
    #[arg(long, default_value_t = 1024)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 50.0)]
    pub fs: f64,
    #[arg(long, value_name = "L", default_value_t = 128)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Two classes separated only by event order (tests directionality).
    #[arg(long)]
    pub directional: bool,
    #[arg(long, value_enum, default_value = "subject")]
    pub protocol: ProtocolArg,
}

fn preset_names() -> Vec<&'static str> {
    presets::names()
}

// ── Run configuration ────────────────────────────────────────────────────

/// On-disk run configuration: partial, with CLI flags layered on top.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub manifest: Option<String>,
    pub out: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad run config {}: {e}", path.display())))
    }
}

/// Fully resolved configuration, written verbatim into the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub manifest: String,
}

impl EffectiveConfig {
    /// Compact canonical form; its SHA-256 is the run's config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

// ── Shared plumbing ──────────────────────────────────────────────────────

/// Derive the train/validation split mandated by the protocol.
///
/// * `subject`: hold out the last ceil(n/5) subjects in sorted order.
/// * `loso`: hold out the first subject in sorted order (one fold; full
///   cross-validation sweeps are scripted over this command).
/// * `temporal`: per-class chronological 80/20.
pub fn split_for_protocol(
    ws: &WindowSet,
    protocol: SplitProtocol,
) -> Result<(WindowSet, WindowSet)> {
    match protocol {
        SplitProtocol::Subject => {
            let mut subjects = ws.unique_subjects();
            subjects.sort();
            let n_hold = subjects.len().div_ceil(SUBJECT_HOLDOUT_DENOM);
            let held: Vec<String> = subjects[subjects.len() - n_hold..].to_vec();
            split_subject(ws, &held)
        }
        SplitProtocol::Loso => {
            let mut subjects = ws.unique_subjects();
            subjects.sort();
            split_subject(ws, &subjects[..1])
        }
        SplitProtocol::Temporal => split_temporal(ws, TEMPORAL_TRAIN_FRAC),
    }
}

/// Load, rescue-filter, window, split, and normalize a manifest's corpus.
/// Returns normalized (train, val) splits.
fn prepare_data(
    manifest: &Manifest,
    manifest_path: &Path,
    seq_len: usize,
    stride: usize,
) -> Result<(WindowSet, WindowSet)> {
    let csv_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.csv);
    let recs = load_csv(&csv_path, manifest.sample_rate_hz)?;
    for r in &recs {
        if r.num_channels() != manifest.num_channels {
            return Err(Error::Data(format!(
                "manifest declares {} channels but the CSV has {}",
                manifest.num_channels,
                r.num_channels()
            )));
        }
    }
    let filtered = rescue_filter(&recs, manifest.preprocessing)?;
    let ws = window_all(&filtered, seq_len, stride)?;
    for w in &ws.warnings {
        eprintln!("warning: {w}");
    }
    let (train_ws, val_ws) = split_for_protocol(&ws, manifest.protocol)?;
    let stats = fit_norm(&train_ws, manifest.preprocessing)?;
    Ok((stats.apply(&train_ws)?, stats.apply(&val_ws)?))
}

/// Model config resolution: explicit config wins; otherwise the family
/// default sized to the data shape.
fn resolve_model(
    explicit: Option<ModelConfig>,
    variant: Variant,
    channels: usize,
    classes: usize,
    seq_len: usize,
) -> Result<ModelConfig> {
    let cfg = match explicit {
        Some(cfg) => cfg,
        None => match variant {
            Variant::Crossover => ModelConfig::crossover_default(channels, classes, seq_len),
            Variant::Ci => ModelConfig::ci_default(channels, classes, seq_len),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn check_model_matches_data(cfg: &ModelConfig, manifest: &Manifest, seq_len: usize) -> Result<()> {
    if cfg.num_channels != manifest.num_channels
        || cfg.num_classes != manifest.num_classes
        || cfg.seq_len != seq_len
    {
        return Err(Error::Config(format!(
            "model expects C={}, K={}, L={} but the data provides C={}, K={}, L={seq_len}",
            cfg.num_channels, cfg.num_classes, cfg.seq_len, manifest.num_channels, manifest.num_classes
        )));
    }
    Ok(())
}

fn manifest_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

// ── count ────────────────────────────────────────────────────────────────

pub fn cmd_count(args: &CountArgs) -> Result<String> {
    if let Some(which) = &args.presets {
        debug_assert_eq!(which, "benchmarks"); // clap restricts the value
        return count_suite(args.variant.into());
    }

    let file_cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let (mut channels, mut classes, mut seq_len) = (args.channels, args.classes, args.seq_len);
    if let Some(name) = &args.preset {
        let p = presets::by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name}")))?;
        channels = channels.or(Some(p.num_channels));
        classes = classes.or(Some(p.num_classes));
        seq_len = seq_len.or(Some(p.seq_len));
    }
    let explicit = file_cfg.and_then(|c| c.model);
    let cfg = match (&explicit, channels, classes) {
        (Some(_), _, _) => {
            let mut cfg = explicit.unwrap();
            if let Some(l) = seq_len {
                cfg.seq_len = l;
            }
            cfg.validate()?;
            cfg
        }
        (None, Some(c), Some(k)) => resolve_model(
            None,
            args.variant.into(),
            c,
            k,
            seq_len.unwrap_or(128),
        )?,
        _ => {
            return Err(Error::Config(
                "count needs --preset, --channels with --classes, or a config file with a model"
                    .into(),
            ))
        }
    };

    let report = cost_report(&cfg, cfg.num_channels, cfg.seq_len);
    let mut out = report.render();
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "total_params": report.total_params,
            "total_macs": report.total_macs,
        })
    )
    .unwrap();
    Ok(out)
}

/// Profile the family default across all benchmark shapes.
fn count_suite(variant: Variant) -> Result<String> {
    let mut out = String::new();
    let mut per_dataset = serde_json::Map::new();
    let mut total = 0u64;
    writeln!(out, "{:<14} {:>10} {:>14}", "dataset", "params", "macs").unwrap();
    let table = presets::benchmark_suite();
    for p in &table {
        let cfg = resolve_model(None, variant, p.num_channels, p.num_classes, p.seq_len)?;
        let report = cost_report(&cfg, p.num_channels, p.seq_len);
        writeln!(out, "{:<14} {:>10} {:>14}", p.name, report.total_params, report.total_macs)
            .unwrap();
        per_dataset.insert(p.name.to_string(), serde_json::json!(report.total_macs));
        total += report.total_macs;
    }
    let average = total as f64 / table.len() as f64;
    writeln!(out, "{:<14} {:>10} {:>14.2}", "average", "", average).unwrap();
    writeln!(
        out,
        "{}",
        serde_json::json!({ "per_dataset": per_dataset, "average_macs": average })
    )
    .unwrap();
    Ok(out)
}

// ── train ────────────────────────────────────────────────────────────────

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let mut run = args.config.as_deref().map(RunConfig::load).transpose()?.unwrap_or_default();
    if let Some(n) = args.seeds {
        run.train.n_seeds = n;
    }
    if let Some(n) = args.max_epochs {
        run.train.max_epochs = n;
    }
    if args.no_augment {
        run.train.augment = false;
    }
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| run.manifest.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("train needs --manifest (or one in the config file)".into()))?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| run.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"));

    let manifest = Manifest::load(&manifest_path)?;
    let (seq_len, stride) = match args.seq_len {
        Some(l) => (l, (l / 4).max(1)),
        None => (manifest.seq_len, manifest.stride),
    };
    let model_cfg = resolve_model(
        run.model.clone(),
        Variant::Crossover,
        manifest.num_channels,
        manifest.num_classes,
        seq_len,
    )?;
    check_model_matches_data(&model_cfg, &manifest, seq_len)?;
    run.train.validate()?;

    let (train_ws, val_ws) = prepare_data(&manifest, &manifest_path, seq_len, stride)?;

    std::fs::create_dir_all(&out_dir)?;
    let effective = EffectiveConfig {
        model: model_cfg.clone(),
        train: run.train.clone(),
        augment: run.augment.clone(),
        manifest: manifest_path.display().to_string(),
    };
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&effective).expect("config serializes"),
    )?;

    let summary = train_all_seeds(&effective, &train_ws, &val_ws, Some(&out_dir))?;
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    let mut out = String::new();
    for r in &summary.per_seed {
        writeln!(
            out,
            "seed {}: best val macro F1 {:.4} at epoch {} ({} epochs run)",
            r.seed, r.macro_f1, r.best_epoch, r.epochs_run
        )
        .unwrap();
    }
    writeln!(
        out,
        "mean macro F1 {:.4} ± {:.4} over {} seeds → {}",
        summary.mean_macro_f1,
        summary.std_macro_f1,
        summary.per_seed.len(),
        out_dir.display()
    )
    .unwrap();
    Ok(out)
}

/// Fit every derived seed on fixed splits; optionally persist per-seed
/// artifacts into `out_dir`.
fn train_all_seeds(
    effective: &EffectiveConfig,
    train_ws: &WindowSet,
    val_ws: &WindowSet,
    out_dir: Option<&Path>,
) -> Result<ResultsFile> {
    let cfg = &effective.train;
    let mut per_seed = Vec::with_capacity(cfg.n_seeds);
    for seed in derived_seeds(cfg.master_seed, cfg.n_seeds) {
        let mut model_cfg = effective.model.clone();
        model_cfg.seed = seed;
        let model = Model::build(&model_cfg)?;
        let aug_cfg = effective.augment.clone();
        let mut aug_fn =
            |x: &Tensor, rng: &mut rand_chacha::ChaCha8Rng| augment(x, &aug_cfg, rng);
        let result = fit(
            &model,
            &train_ws.windows,
            &train_ws.labels,
            &val_ws.windows,
            &val_ws.labels,
            cfg,
            seed,
            if cfg.augment { Some(&mut aug_fn) } else { None },
        )?;
        let (confusion, macro_f1) = evaluate(&result.model, &val_ws.windows, &val_ws.labels)?;
        if let Some(dir) = out_dir {
            result.model.save(&dir.join(format!("model_seed{seed}.bin")))?;
            let mut log = std::io::BufWriter::new(
                std::fs::File::create(dir.join(format!("epochs_seed{seed}.jsonl")))?,
            );
            for rec in &result.log {
                writeln!(log, "{}", serde_json::to_string(rec).expect("record serializes"))?;
            }
            log.flush()?;
        }
        per_seed.push(SeedResult {
            seed,
            macro_f1,
            per_class_f1: confusion.per_class_f1()?,
            confusion: confusion.rows(),
            best_epoch: result.best_epoch,
            epochs_run: result.log.len(),
        });
    }
    let (mean, std) = aggregate(&per_seed.iter().map(|r| r.macro_f1).collect::<Vec<_>>())?;
    let manifest_digest = if Path::new(&effective.manifest).exists() {
        manifest_hash(Path::new(&effective.manifest))?
    } else {
        String::new()
    };
    Ok(ResultsFile {
        config_hash: sha256_hex(effective.canonical_json().as_bytes()),
        manifest_hash: manifest_digest,
        per_seed,
        mean_macro_f1: mean,
        std_macro_f1: std,
    })
}

// ── eval ─────────────────────────────────────────────────────────────────

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    match (&args.run, &args.model) {
        (Some(run_dir), None) => eval_run_dir(run_dir, args.manifest.as_deref()),
        (None, Some(model_path)) => {
            let manifest_path = args
                .manifest
                .as_deref()
                .ok_or_else(|| Error::Config("eval --model needs --manifest".into()))?;
            eval_single(model_path, manifest_path)
        }
        _ => Err(Error::Config("eval needs exactly one of --run or --model".into())),
    }
}

/// Evaluate one checkpoint on the manifest's validation split.
fn eval_single(model_path: &Path, manifest_path: &Path) -> Result<String> {
    let model = Model::load(model_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let cfg = model.config();
    check_model_matches_data(cfg, &manifest, manifest.seq_len)?;
    let (_, val_ws) = prepare_data(&manifest, manifest_path, manifest.seq_len, manifest.stride)?;
    let (confusion, macro_f1) = evaluate(&model, &val_ws.windows, &val_ws.labels)?;

    let mut out = String::new();
    writeln!(out, "{}", confusion.render()).unwrap();
    writeln!(out, "macro F1: {macro_f1:.6}").unwrap();
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "macro_f1": macro_f1,
            "balanced_accuracy": confusion.balanced_accuracy()?,
            "per_class_f1": confusion.per_class_f1()?,
            "confusion": confusion.rows(),
            "n_windows": val_ws.len(),
        })
    )
    .unwrap();
    Ok(out)
}

/// Re-derive every metric recorded in a run directory and verify equality.
fn eval_run_dir(run_dir: &Path, manifest_override: Option<&Path>) -> Result<String> {
    let config_text = std::fs::read_to_string(run_dir.join("config.json"))?;
    let effective: EffectiveConfig = serde_json::from_str(&config_text)
        .map_err(|e| Error::Format(format!("bad config.json in {}: {e}", run_dir.display())))?;
    let summary_text = std::fs::read_to_string(run_dir.join("summary.json"))?;
    let recorded: ResultsFile = serde_json::from_str(&summary_text)
        .map_err(|e| Error::Format(format!("bad summary.json in {}: {e}", run_dir.display())))?;

    let manifest_path = manifest_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&effective.manifest));
    let manifest = Manifest::load(&manifest_path)?;
    if !recorded.manifest_hash.is_empty() {
        let now = manifest_hash(&manifest_path)?;
        if now != recorded.manifest_hash {
            return Err(Error::Data(format!(
                "manifest content hash {now} differs from the recorded {}; the data has changed",
                recorded.manifest_hash
            )));
        }
    }
    let (_, val_ws) = prepare_data(
        &manifest,
        &manifest_path,
        effective.model.seq_len,
        manifest.stride,
    )?;

    let mut out = String::new();
    for r in &recorded.per_seed {
        let model = Model::load(&run_dir.join(format!("model_seed{}.bin", r.seed)))?;
        let (confusion, macro_f1) = evaluate(&model, &val_ws.windows, &val_ws.labels)?;
        if macro_f1 != r.macro_f1 || confusion.rows() != r.confusion {
            return Err(Error::Data(format!(
                "seed {}: recomputed macro F1 {macro_f1} does not reproduce the recorded {}",
                r.seed, r.macro_f1
            )));
        }
        writeln!(out, "seed {}: macro F1 {macro_f1:.6} reproduced", r.seed).unwrap();
    }
    writeln!(
        out,
        "run verified: {} seeds, mean macro F1 {:.4} ± {:.4}",
        recorded.per_seed.len(),
        recorded.mean_macro_f1,
        recorded.std_macro_f1
    )
    .unwrap();
    Ok(out)
}

// ── ablate ───────────────────────────────────────────────────────────────

/// One row of an ablation comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: u64,
    pub macs: u64,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
    pub delta_f1: Option<f64>,
}

/// Enumerate the variant configs along one axis, baseline first. Each
/// variant differs from the baseline in exactly one field (seq_len also
/// re-windows the data to match).
fn axis_variants(base: &ModelConfig, axis: Axis) -> Vec<(String, ModelConfig)> {
    let mut variants = Vec::new();
    match axis {
        Axis::Bidir => {
            for flag in [base.bidirectional, !base.bidirectional] {
                let mut cfg = base.clone();
                cfg.bidirectional = flag;
                variants.push((format!("bidir={flag}"), cfg));
            }
        }
        Axis::Pooling => {
            let other = match base.pooling {
                Pooling::Gated => Pooling::Mean,
                Pooling::Mean => Pooling::Gated,
            };
            for p in [base.pooling, other] {
                let mut cfg = base.clone();
                cfg.pooling = p;
                variants.push((format!("pooling={p:?}").to_lowercase(), cfg));
            }
        }
        Axis::Stem => {
            let other = match base.variant {
                Variant::Crossover => Variant::Ci,
                Variant::Ci => Variant::Crossover,
            };
            for v in [base.variant, other] {
                let mut cfg = base.clone();
                cfg.variant = v;
                variants.push((format!("stem={v:?}").to_lowercase(), cfg));
            }
        }
        Axis::DState => {
            for n in [base.d_state, (base.d_state / 2).max(1)] {
                let mut cfg = base.clone();
                cfg.d_state = n;
                variants.push((format!("d_state={n}"), cfg));
            }
        }
        Axis::DModel => {
            for d in [base.d_model, (base.d_model * 2 / 3).max(1)] {
                let mut cfg = base.clone();
                cfg.d_model = d;
                variants.push((format!("d_model={d}"), cfg));
            }
        }
        Axis::Expand => {
            for e in [base.expand, base.expand + 1] {
                let mut cfg = base.clone();
                cfg.expand = e;
                variants.push((format!("expand={e}"), cfg));
            }
        }
        Axis::SeqLen => {
            // Baseline first, then the remaining rungs of the 64–512 ladder.
            let ladder = [64usize, 128, 256, 512];
            for l in std::iter::once(base.seq_len).chain(ladder.into_iter().filter(|&l| l != base.seq_len)) {
                let mut cfg = base.clone();
                cfg.seq_len = l;
                variants.push((format!("seq_len={l}"), cfg));
            }
        }
    }
    // Dedup in case the baseline already equals a listed variant.
    let mut seen = Vec::new();
    variants.retain(|(name, _)| {
        if seen.contains(name) {
            false
        } else {
            seen.push(name.clone());
            true
        }
    });
    variants
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<String> {
    let mut run = args.config.as_deref().map(RunConfig::load).transpose()?.unwrap_or_default();
    if let Some(n) = args.seeds {
        run.train.n_seeds = n;
    }
    if let Some(n) = args.max_epochs {
        run.train.max_epochs = n;
    }

    // Shape source: manifest if present, else preset (count-only).
    let manifest_path = args.manifest.clone().or_else(|| run.manifest.as_ref().map(PathBuf::from));
    let (channels, classes, base_len, base_stride, manifest) = match (&manifest_path, &args.preset)
    {
        (Some(path), _) => {
            let m = Manifest::load(path)?;
            (m.num_channels, m.num_classes, m.seq_len, m.stride, Some(m))
        }
        (None, Some(name)) => {
            let p = presets::by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown preset {name}")))?;
            (p.num_channels, p.num_classes, p.seq_len, p.stride, None)
        }
        (None, None) => {
            return Err(Error::Config("ablate needs --manifest or --preset".into()));
        }
    };
    if manifest.is_none() && !args.count_only {
        return Err(Error::Config(
            "ablate without a manifest has no data to train on; pass --count-only".into(),
        ));
    }

    let seq_len = args.seq_len.unwrap_or(base_len);
    let base =
        resolve_model(run.model.clone(), Variant::Crossover, channels, classes, seq_len)?;
    let variants = axis_variants(&base, args.axis);

    let mut rows = Vec::with_capacity(variants.len());
    let mut baseline_mean: Option<f64> = None;
    for (i, (name, cfg)) in variants.iter().enumerate() {
        cfg.validate()?;
        let report: CostReport = cost_report(cfg, channels, cfg.seq_len);
        let (mean_f1, std_f1) = if args.count_only {
            (None, None)
        } else {
            let m = manifest.as_ref().unwrap();
            let mpath = manifest_path.as_ref().unwrap();
            // seq_len variants re-window at the variant's length with the
            // baseline overlap ratio.
            let stride = if cfg.seq_len == base_len {
                base_stride
            } else {
                (cfg.seq_len * base_stride / base_len).max(1)
            };
            let (train_ws, val_ws) = prepare_data(m, mpath, cfg.seq_len, stride)?;
            let effective = EffectiveConfig {
                model: cfg.clone(),
                train: run.train.clone(),
                augment: run.augment.clone(),
                manifest: mpath.display().to_string(),
            };
            let summary = train_all_seeds(&effective, &train_ws, &val_ws, None)?;
            (Some(summary.mean_macro_f1), Some(summary.std_macro_f1))
        };
        if i == 0 {
            baseline_mean = mean_f1;
        }
        rows.push(AblationRow {
            variant: name.clone(),
            params: report.total_params,
            macs: report.total_macs,
            mean_f1,
            std_f1,
            delta_f1: match (mean_f1, baseline_mean, i) {
                (_, _, 0) => None,
                (Some(m), Some(b), _) => Some(m - b),
                _ => None,
            },
        });
    }

    let mut out = String::new();
    writeln!(out, "ablation axis: {:?} (baseline: {})", args.axis, rows[0].variant).unwrap();
    if args.count_only {
        writeln!(out, "{:<18} {:>10} {:>14} {:>9} {:>9}", "variant", "params", "macs", "Δparams", "Δmacs")
            .unwrap();
        let (p0, m0) = (rows[0].params as f64, rows[0].macs as f64);
        for r in &rows {
            let dp = 100.0 * (r.params as f64 - p0) / p0;
            let dm = 100.0 * (r.macs as f64 - m0) / m0;
            writeln!(
                out,
                "{:<18} {:>10} {:>14} {:>8.1}% {:>8.1}%",
                r.variant, r.params, r.macs, dp, dm
            )
            .unwrap();
        }
    } else {
        writeln!(
            out,
            "{:<18} {:>10} {:>14} {:>9} {:>8} {:>9}",
            "variant", "params", "macs", "mean F1", "std", "ΔF1"
        )
        .unwrap();
        for r in &rows {
            writeln!(
                out,
                "{:<18} {:>10} {:>14} {:>9.4} {:>8.4} {:>9}",
                r.variant,
                r.params,
                r.macs,
                r.mean_f1.unwrap_or(f64::NAN),
                r.std_f1.unwrap_or(f64::NAN),
                r.delta_f1.map_or("baseline".to_string(), |d| format!("{d:+.4}")),
            )
            .unwrap();
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("ablate.json"),
            serde_json::to_string_pretty(&rows).expect("rows serialize"),
        )?;
    }
    Ok(out)
}

// ── synth ────────────────────────────────────────────────────────────────

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let (recs, classes, name) = if args.directional {
        (
            synth_har_directional(
                args.subjects,
                args.channels,
                args.samples_per_class,
                args.seq_len,
                args.fs,
                args.seed,
            )?,
            2,
            "synthetic-directional",
        )
    } else {
        (
            synth_har(
                args.subjects,
                args.classes,
                args.channels,
                args.samples_per_class,
                args.fs,
                args.seed,
            )?,
            args.classes,
            "synthetic",
        )
    };
    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("corpus.csv");
    save_csv(&csv_path, &recs)?;
    let manifest = Manifest {
        name: name.into(),
        num_channels: args.channels,
        num_classes: classes,
        sample_rate_hz: args.fs,
        seq_len: args.seq_len,
        stride: args.stride,
        preprocessing: crate::presets::Preprocessing::Zscore,
        protocol: args.protocol.into(),
        csv: "corpus.csv".into(),
    };
    let manifest_path = args.out.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(format!(
        "wrote {} recordings ({} subjects × {} classes, {} samples each) → {}\n",
        recs.len(),
        args.subjects,
        classes,
        recs[0].num_samples(),
        manifest_path.display()
    ))
}

// ── dispatch ─────────────────────────────────────────────────────────────

/// Execute one parsed command, returning its printable output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Count(a) => cmd_count(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &str) -> Cli {
        Cli::try_parse_from(line.split_whitespace()).unwrap()
    }

    #[test]
    fn count_with_preset_prints_table_and_json() {
        let cli = parse("babymamba count --preset opportunity --variant ci");
        let out = run(&cli).unwrap();
        // The JSON trailer carries the same totals the table shows.
        let json_line = out.lines().rev().find(|l| l.starts_with('{')).unwrap();
        let v: serde_json::Value = serde_json::from_str(json_line).unwrap();
        let total_macs = v["total_macs"].as_u64().unwrap();
        assert!(out.contains(&total_macs.to_string()));
        // CI at the Opportunity shape: within ±50% of 222.31M.
        let lo = (222.31e6 * 0.5) as u64;
        let hi = (222.31e6 * 1.5) as u64;
        assert!((lo..=hi).contains(&total_macs), "{total_macs}");
    }

    #[test]
    fn count_suite_average_lands_in_the_published_band() {
        let cli = parse("babymamba count --presets benchmarks");
        let out = run(&cli).unwrap();
        let json_line = out.lines().rev().find(|l| l.starts_with('{')).unwrap();
        let v: serde_json::Value = serde_json::from_str(json_line).unwrap();
        let avg = v["average_macs"].as_f64().unwrap();
        assert!(avg > 2.21e6 * 0.5 && avg < 2.21e6 * 1.5, "{avg}");
        assert_eq!(v["per_dataset"].as_object().unwrap().len(), 8);
    }

    #[test]
    fn count_without_a_shape_source_is_a_config_error() {
        let cli = parse("babymamba count");
        assert!(matches!(run(&cli).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn axis_variants_toggle_exactly_one_field() {
        let base = ModelConfig::crossover_default(6, 3, 128);
        for axis in [Axis::Bidir, Axis::Pooling, Axis::Stem, Axis::DState, Axis::DModel, Axis::Expand, Axis::SeqLen]
        {
            let variants = axis_variants(&base, axis);
            assert!(variants.len() >= 2, "{axis:?}");
            assert_eq!(variants[0].1, base, "{axis:?} baseline must come first");
            for (name, cfg) in &variants[1..] {
                let mut differing = 0;
                macro_rules! cmp {
                    ($($f:ident),*) => { $( if cfg.$f != base.$f { differing += 1; } )* };
                }
                cmp!(variant, d_model, d_state, n_layers, expand, k_stem, k_conv, dt_rank,
                     num_channels, num_classes, seq_len, bidirectional, pooling, seed);
                assert_eq!(differing, 1, "{axis:?} variant {name} changed {differing} fields");
            }
        }
    }

    #[test]
    fn ablate_count_only_reports_the_d_state_parameter_drop() {
        // Halving d_state 16 → 8 on the channel-independent family shaves
        // roughly 16% of the parameters.
        let base = ModelConfig::ci_default(79, 5, 128);
        let variants = axis_variants(&base, Axis::DState);
        let p0 = cost_report(&variants[0].1, 79, 128).total_params as f64;
        let p1 = cost_report(&variants[1].1, 79, 128).total_params as f64;
        let delta = (p1 - p0) / p0;
        assert!((-0.20..=-0.10).contains(&delta), "d_state halving delta {delta}");

        // The command renders both variants without touching any data.
        let cli = parse("babymamba ablate --axis d_state --preset opportunity --count-only");
        let args = match cli.command {
            Command::Ablate(a) => a,
            _ => unreachable!(),
        };
        let out = cmd_ablate(&args).unwrap();
        assert!(out.contains("d_state=8") && out.contains("d_state=4"), "{out}");
    }

    #[test]
    fn split_for_protocol_respects_each_protocol() {
        use crate::datapipe::{window_all, synth_har};
        let recs = synth_har(5, 2, 2, 200, 50.0, 3).unwrap();
        let ws = window_all(&recs, 50, 50).unwrap();

        let (train, val) = split_for_protocol(&ws, SplitProtocol::Subject).unwrap();
        assert_eq!(val.unique_subjects(), vec!["s04"]); // last ceil(5/5)=1 sorted subject
        assert_eq!(train.len() + val.len(), ws.len());

        let (_, val) = split_for_protocol(&ws, SplitProtocol::Loso).unwrap();
        assert_eq!(val.unique_subjects(), vec!["s00"]); // first sorted subject

        let (train, val) = split_for_protocol(&ws, SplitProtocol::Temporal).unwrap();
        assert_eq!(train.len() + val.len(), ws.len());
    }

    #[test]
    fn synth_then_manifest_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let args = SynthArgs {
            out: dir.path().to_path_buf(),
            subjects: 3,
            classes: 2,
            channels: 2,
            samples_per_class: 150,
            fs: 50.0,
            seq_len: 50,
            stride: 25,
            seed: 1,
            directional: false,
            protocol: ProtocolArg::Subject,
        };
        let msg = cmd_synth(&args).unwrap();
        assert!(msg.contains("3 recordings"));
        let mpath = dir.path().join("manifest.json");
        let manifest = Manifest::load(&mpath).unwrap();
        let ws = manifest.load_windows(&mpath).unwrap();
        assert!(!ws.is_empty());
        assert_eq!(ws.windows[0].shape(), &[2, 50]);
    }

    #[test]
    fn unknown_preset_is_rejected_at_parse_time() {
        assert!(Cli::try_parse_from("babymamba count --preset nope".split_whitespace()).is_err());
    }
}
