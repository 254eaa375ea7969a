//! Command line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use segdec_core::data::{assign_supervision, make_folds, DatasetSplit};
use segdec_core::experiment::{grid_for_mode, AblationRow, SupervisionMode, DEFAULT_GRID};
use segdec_core::metrics::{evaluate_split, EvalReport, ThresholdPolicy, DEFAULT_THRESHOLD};
use segdec_core::synth::{Difficulty, SynthConfig, DEFAULT_TEXTURE_AMPLITUDE};
use segdec_core::train::{preset_hyperparams, train_with, Hyperparams, Preset, TrainHistory};
use segdec_core::{ModelConfig, SegDecNet, Widths};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint_for, save_checkpoint};
use crate::datasets::{load_dataset, DatasetFormat, LoadOptions};
use crate::history::write_history;
use crate::manifest::{DatasetSection, EvalSection, RunManifest, SupervisionSection};
use crate::report::{read_scores, write_report};
use crate::synth_io::generate_benchmark;

/// Environment variable naming the directory under which runs are created
/// when `--out` is not given.
pub const OUT_ENV: &str = "SEGDEC_OUT";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Parser)]
#[command(name = "segdec", version, about = "Surface-defect detection with mixed supervision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark to disk.
    Synth(SynthArgs),
    /// Train a model and write manifest, checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Component ablation over the three supervision modes.
    Ablate(AblateArgs),
    /// Rebuild report files from a scores CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Contrast in [0.5, 1).
    #[arg(long, conflicts_with = "hard")]
    pub easy: bool,
    /// Contrast in [0.1, 0.3) (the default).
    #[arg(long)]
    pub hard: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image side in pixels (multiple of 64).
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 40)]
    pub train_pos: usize,
    #[arg(long, default_value_t = 200)]
    pub train_neg: usize,
    #[arg(long, default_value_t = 20)]
    pub test_pos: usize,
    #[arg(long, default_value_t = 100)]
    pub test_neg: usize,
    /// Peak amplitude of the background texture.
    #[arg(long, default_value_t = DEFAULT_TEXTURE_AMPLITUDE)]
    pub texture: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: Option<DatasetFormat>,
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Training subdirectory; defaults to the format's own split, if any.
    #[arg(long)]
    pub train_subset: Option<String>,
    /// Evaluation subdirectory.
    #[arg(long)]
    pub test_subset: Option<String>,
    /// Resize images to HEIGHTxWIDTH before padding.
    #[arg(long, value_parser = parse_size)]
    pub resize: Option<[usize; 2]>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub channels: u8,
    /// Keep only this many positives (lowest ids first).
    #[arg(long)]
    pub max_positives: Option<usize>,
    /// Severstal defect class treated as positive.
    #[arg(long, default_value_t = 3)]
    pub severstal_class: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WidthChoice {
    Full,
    Compact,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Hyperparameter preset: dagm, ksdd, ksdd_weak, ksdd2, severstal[:N_all], synth.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub bs: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub wpos: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub dilate: Option<usize>,
    #[arg(long)]
    pub no_dynamic_balancing: bool,
    #[arg(long)]
    pub no_grad_stop: bool,
    #[arg(long)]
    pub no_distance_transform: bool,
    /// Network widths; compact by default on synthetic data.
    #[arg(long, value_enum)]
    pub widths: Option<WidthChoice>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Number of pixel-labeled positives (default: all).
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decision threshold for the final report, or "best" for the F1 optimum.
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<Threshold>,
    /// Evaluate the test subset after every epoch and keep the best checkpoint.
    #[arg(long)]
    pub validate: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Repeat the run described by this manifest; other flags are ignored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint file (default: the run's model.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<Threshold>,
    /// Supervision modes to run (comma separated: fs, ms, ws).
    #[arg(long, value_delimiter = ',', default_value = "fs,ms,ws")]
    pub modes: Vec<String>,
    /// Folds used to carve a test split for formats without one.
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-image scores (`scores.csv` of an earlier report).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    Best,
}

impl Threshold {
    fn policy(t: Option<Threshold>) -> ThresholdPolicy {
        match t {
            Some(Threshold::Best) => ThresholdPolicy::BestF1,
            Some(Threshold::Fixed(v)) => ThresholdPolicy::Fixed(v),
            None => ThresholdPolicy::Fixed(DEFAULT_THRESHOLD),
        }
    }

    fn to_manifest(t: Option<Threshold>) -> Option<f64> {
        match Threshold::policy(t) {
            ThresholdPolicy::Fixed(v) => Some(v),
            ThresholdPolicy::BestF1 => None,
        }
    }

    fn from_manifest(v: Option<f64>) -> ThresholdPolicy {
        v.map_or(ThresholdPolicy::BestF1, ThresholdPolicy::Fixed)
    }
}

fn parse_threshold(s: &str) -> std::result::Result<Threshold, String> {
    if s.eq_ignore_ascii_case("best") {
        return Ok(Threshold::Best);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is neither a number nor 'best'"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("threshold {v} outside [0, 1]"));
    }
    Ok(Threshold::Fixed(v))
}

fn parse_size(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad size '{s}'"));
    Ok([parse(h)?, parse(w)?])
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Eval(a) => cmd_eval(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn out_dir(out: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    if let Some(o) = out {
        return Ok(o);
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(command)),
        None => bail!("--out is required (or set {OUT_ENV})"),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let out = out_dir(a.out, "synth")?;
    let difficulty = if a.easy { Difficulty::Easy } else { Difficulty::Hard };
    let config = SynthConfig {
        height: a.size,
        width: a.size,
        train_pos: a.train_pos,
        train_neg: a.train_neg,
        test_pos: a.test_pos,
        test_neg: a.test_neg,
        texture_amplitude: a.texture,
        ..SynthConfig::new(difficulty, a.seed)
    };
    let manifest = generate_benchmark(&config, &out)?;
    eprintln!("wrote {} images to {}", manifest.items.len(), out.display());
    Ok(())
}

fn dataset_section(data: &DataArgs) -> Result<DatasetSection> {
    let format = data.dataset.context("--dataset is required")?;
    let root = data.root.clone().context("--root is required")?;
    let defaults = format.default_subsets();
    Ok(DatasetSection {
        format,
        root,
        train_subset: data.train_subset.clone().or(defaults.map(|d| d.0.to_string())),
        test_subset: data.test_subset.clone().or(defaults.map(|d| d.1.to_string())),
        options: LoadOptions {
            subset: None,
            channels: usize::from(data.channels),
            resize: data.resize,
            max_positives: data.max_positives,
            severstal_class: data.severstal_class,
        },
    })
}

fn default_preset(format: DatasetFormat, n: usize, n_all: usize) -> Result<Preset> {
    Ok(match format {
        DatasetFormat::Dagm => Preset::Dagm,
        DatasetFormat::Ksdd if n == 0 => Preset::KsddWeak,
        DatasetFormat::Ksdd => Preset::Ksdd,
        DatasetFormat::Ksdd2 => Preset::Ksdd2,
        DatasetFormat::Severstal => {
            let p = Preset::Severstal { n_all };
            preset_hyperparams(p).with_context(|| {
                format!("no Severstal preset for {n_all} positives; pass --preset severstal:<N_all> or --epochs")
            })?;
            p
        }
        DatasetFormat::Synth => Preset::Synth,
    })
}

/// Preset values with command-line overrides applied.
fn resolve_hyperparams(h: &HyperArgs, format: DatasetFormat, n: usize, n_all: usize) -> Result<Hyperparams> {
    let preset = match &h.preset {
        Some(key) => Preset::from_key(key)?,
        None => default_preset(format, n, n_all)?,
    };
    let mut hp = match preset_hyperparams(preset) {
        Ok(hp) => hp,
        // an unmatched Severstal size still works when the epoch count is given
        Err(_) if h.epochs.is_some() && matches!(preset, Preset::Severstal { .. }) => {
            preset_hyperparams(Preset::Severstal { n_all: 3000 })?
        }
        Err(e) => return Err(e.into()),
    };
    hp.seed = h.seed;
    hp.epochs = h.epochs.unwrap_or(hp.epochs);
    hp.learning_rate = h.lr.unwrap_or(hp.learning_rate);
    hp.batch_size = h.bs.unwrap_or(hp.batch_size);
    hp.delta = h.delta.unwrap_or(hp.delta);
    hp.w_pos = h.wpos.unwrap_or(hp.w_pos);
    hp.p = h.p.unwrap_or(hp.p);
    hp.dilation_kernel = h.dilate.unwrap_or(hp.dilation_kernel);
    // without pixel labels there is no segmentation phase to schedule
    if h.no_dynamic_balancing || n == 0 {
        hp.dynamic_balancing = false;
    }
    if h.no_grad_stop {
        hp.stop_gradient_flow = false;
    }
    if h.no_distance_transform {
        hp.distance_transform = false;
    }
    hp.validate()?;
    Ok(hp)
}

fn widths_for(h: &HyperArgs, format: DatasetFormat) -> Widths {
    match h.widths {
        Some(WidthChoice::Full) => Widths::FULL,
        Some(WidthChoice::Compact) => Widths::COMPACT,
        None if format == DatasetFormat::Synth => Widths::COMPACT,
        None => Widths::FULL,
    }
}

fn model_config_for(split: &DatasetSplit, widths: Widths, hp: &Hyperparams) -> Result<ModelConfig> {
    let first = split.samples.first().context("empty split")?;
    let (c, h, w) = (first.image.channels, first.image.height, first.image.width);
    let config = ModelConfig::new(c, h, w).with_widths(widths).with_seed(hp.seed).with_stop_gradient(hp.stop_gradient_flow);
    config.validate()?;
    Ok(config)
}

fn load(section: &DatasetSection, options: &LoadOptions) -> Result<DatasetSplit> {
    eprintln!(
        "loading {} from {}{}",
        section.format,
        section.root.display(),
        options.subset.as_deref().map(|s| format!(" ({s})")).unwrap_or_default()
    );
    load_dataset(section.format, &section.root, options)
        .with_context(|| format!("cannot load {} dataset at {}", section.format, section.root.display()))
}

fn progress(record: &segdec_core::train::EpochRecord) {
    eprintln!(
        "epoch {:>3}  lambda {:.3}  seg {:.5}  cls {:.5}  total {:.5}{}",
        record.epoch,
        record.lambda,
        record.seg_loss,
        record.cls_loss,
        record.total_loss,
        record.val_ap.map(|ap| format!("  val AP {ap:.4}")).unwrap_or_default()
    );
}

/// Trains, writing `manifest.toml`, `model.ckpt`, `history.csv` and, when a
/// test subset exists, a report under `report/`.
pub fn cmd_train(a: TrainArgs) -> Result<PathBuf> {
    let (manifest, out) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            let out = match a.out.clone() {
                Some(o) => o,
                None if path.is_dir() => path.clone(),
                None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            (m, out)
        }
        None => {
            let section = dataset_section(&a.data)?;
            let split = load(&section, &section.train_options())?;
            let n = a.n.unwrap_or(split.n_all);
            let hp = resolve_hyperparams(&a.hyper, section.format, n, split.n_all)?;
            let model = model_config_for(&split, widths_for(&a.hyper, section.format), &hp)?;
            let m = RunManifest {
                command: "train".into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                seed: a.hyper.seed,
                supervision: SupervisionSection { n, n_all: split.n_all },
                dataset: section,
                hyperparams: hp,
                model,
                eval: EvalSection {
                    threshold: Threshold::to_manifest(a.threshold),
                    folds: None,
                    validate: a.validate,
                    checkpoint_every: a.checkpoint_every,
                },
            };
            (m, out_dir(a.out.clone(), "train")?)
        }
    };
    manifest.write(&out)?;
    run_training(&manifest, &out)?;
    Ok(out)
}

fn run_training(m: &RunManifest, out: &Path) -> Result<()> {
    let split = load(&m.dataset, &m.dataset.train_options())?;
    if split.n_all != m.supervision.n_all {
        bail!("dataset now has {} positives, the manifest recorded {}", split.n_all, m.supervision.n_all);
    }
    let split = assign_supervision(&split, m.supervision.n, m.seed)?;
    let test = match (&m.dataset.test_subset, m.eval.validate) {
        (Some(_), _) => Some(load(&m.dataset, &m.dataset.test_options())?),
        (None, true) => bail!("--validate needs a test subset"),
        (None, false) => None,
    };
    let policy = Threshold::from_manifest(m.eval.threshold);
    let mut model = SegDecNet::<f32>::new(m.model.clone())?;
    let mut best = f64::NEG_INFINITY;
    let history = train_with(&mut model, &split, &m.hyperparams, |record, model| {
        let mut val_ap = None;
        if m.eval.validate {
            let ap = evaluate_split(model, test.as_ref().expect("checked above"), policy)?.ap;
            if ap > best {
                best = ap;
                save_checkpoint(&out.join("best.ckpt"), model).map_err(io_err)?;
            }
            val_ap = Some(ap);
        }
        if let Some(k) = m.eval.checkpoint_every.filter(|&k| k > 0) {
            if (record.epoch + 1) % k == 0 {
                save_checkpoint(&out.join(format!("epoch_{:04}.ckpt", record.epoch + 1)), model).map_err(io_err)?;
            }
        }
        progress(&segdec_core::train::EpochRecord { val_ap, ..*record });
        Ok(val_ap)
    })?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model)?;
    write_history(&out.join(HISTORY_FILE), &history)?;
    if let Some(test) = &test {
        let report = evaluate_split(&model, test, policy)?;
        write_report(&out.join("report"), &report)?;
        eprintln!("test AP {:.4}  AUC {:.4}", report.ap, report.auc);
    }
    Ok(())
}

/// File errors inside the training callback, which speaks the core error type.
fn io_err(e: anyhow::Error) -> segdec_core::Error {
    segdec_core::Error::Input(format!("{e:#}"))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run_manifest = a.run.as_ref().map(|r| RunManifest::read(r)).transpose()?;
    let section = match (&run_manifest, a.data.dataset) {
        (_, Some(_)) => dataset_section(&a.data)?,
        (Some(m), None) => m.dataset.clone(),
        (None, None) => bail!("give --run or --dataset/--root"),
    };
    let checkpoint = match (&a.checkpoint, &a.run) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => r.join(CHECKPOINT_FILE),
        (None, None) => bail!("give --checkpoint or --run"),
    };
    let options = match &section.test_subset {
        Some(_) => section.test_options(),
        None => section.options.clone(),
    };
    let split = load(&section, &options)?;
    let first = split.samples.first().context("empty split")?;
    let expected = match &run_manifest {
        Some(m) => m.model.clone(),
        None => {
            let ck = crate::checkpoint::load_checkpoint(&checkpoint)?;
            ModelConfig { input_channels: first.image.channels, input_height: first.image.height, input_width: first.image.width, ..ck.config().clone() }
        }
    };
    let model = load_checkpoint_for(&checkpoint, &expected)?;
    let out = out_dir(a.out, "eval")?;
    let report = evaluate_split(&model, &split, Threshold::policy(a.threshold))?;
    write_report(&out, &report)?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &EvalReport) {
    let t = &r.at_threshold;
    println!(
        "AP {:.4}  AUC {:.4}  threshold {:.3}: CA {:.4} F1 {:.4} mAcc {:.4} FP {} FN {}  (best F1 {:.4} at {:.3})",
        r.ap, r.auc, t.threshold, t.ca, t.f1, t.macc, t.fp, t.fn_, r.best_f1.f1, r.best_f1.threshold
    );
}

#[derive(Serialize)]
struct CrossvalSummary {
    folds: Vec<f64>,
    mean_ap: f64,
}

fn cmd_crossval(a: CrossvalArgs) -> Result<()> {
    let mut section = dataset_section(&a.data)?;
    // folds are carved from the whole dataset
    section.train_subset = a.data.train_subset.clone();
    section.test_subset = None;
    let all = load(&section, &section.train_options())?;
    let folds = make_folds(&all, a.folds, a.hyper.seed)?;
    let out = out_dir(a.out, "crossval")?;
    let policy = Threshold::policy(a.threshold);
    let mut aps = Vec::new();
    for (k, (train_split, test_split)) in folds.iter().enumerate() {
        let n = a.n.unwrap_or(train_split.n_all).min(train_split.n_all);
        let hp = resolve_hyperparams(&a.hyper, section.format, n, train_split.n_all)?;
        let model_config = model_config_for(train_split, widths_for(&a.hyper, section.format), &hp)?;
        let fold_dir = out.join(format!("fold_{k}"));
        RunManifest {
            command: "crossval".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: a.hyper.seed,
            dataset: section.clone(),
            supervision: SupervisionSection { n, n_all: train_split.n_all },
            hyperparams: hp.clone(),
            model: model_config.clone(),
            eval: EvalSection { threshold: Threshold::to_manifest(a.threshold), folds: Some(a.folds), validate: false, checkpoint_every: None },
        }
        .write(&fold_dir)?;
        let split = assign_supervision(train_split, n, hp.seed)?;
        let mut model = SegDecNet::<f32>::new(model_config)?;
        eprintln!("fold {k}: {} train / {} test images, N = {n}", split.len(), test_split.len());
        let history = train_with(&mut model, &split, &hp, |r, _| {
            progress(r);
            Ok(None)
        })?;
        write_history(&fold_dir.join(HISTORY_FILE), &history)?;
        save_checkpoint(&fold_dir.join(CHECKPOINT_FILE), &model)?;
        let report = evaluate_split(&model, test_split, policy)?;
        write_report(&fold_dir.join("report"), &report)?;
        print_report(&report);
        aps.push(report.ap);
    }
    let mean_ap = aps.iter().sum::<f64>() / aps.len() as f64;
    let path = out.join("crossval.json");
    fs::write(&path, serde_json::to_string_pretty(&CrossvalSummary { folds: aps, mean_ap })? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!("mean AP {mean_ap:.4} over {} folds", a.folds);
    Ok(())
}

fn parse_mode(s: &str) -> Result<SupervisionMode> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "fs" | "full" => SupervisionMode::Full,
        "ms" | "mixed" => SupervisionMode::Mixed,
        "ws" | "weak" => SupervisionMode::Weak,
        other => bail!("unknown supervision mode '{other}' (fs, ms, ws)"),
    })
}

pub const ABLATION_HEADER: [&str; 8] =
    ["mode", "n", "dynamic_balancing", "stop_gradient_flow", "distance_transform", "ap", "fp", "fn"];

fn ablation_record(row: &AblationRow) -> [String; 8] {
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    [
        row.mode.label().to_string(),
        row.n_labeled.to_string(),
        flag(row.dynamic_balancing),
        flag(row.stop_gradient_flow),
        row.distance_transform.map_or("N/A".to_string(), flag),
        row.ap.to_string(),
        row.fp.to_string(),
        row.fn_.to_string(),
    ]
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let modes = a.modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>>>()?;
    let section = dataset_section(&a.data)?;
    let (train_split, test_split) = match section.test_subset {
        Some(_) => (load(&section, &section.train_options())?, load(&section, &section.test_options())?),
        None => {
            let all = load(&section, &section.train_options())?;
            make_folds(&all, a.folds, a.hyper.seed)?.swap_remove(0)
        }
    };
    let out = out_dir(a.out, "ablate")?;
    let policy = Threshold::policy(a.threshold);
    let n_all = train_split.n_all;
    let base = resolve_hyperparams(&a.hyper, section.format, n_all, n_all)?;
    let model_config = model_config_for(&train_split, widths_for(&a.hyper, section.format), &base)?;
    RunManifest {
        command: "ablate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: a.hyper.seed,
        dataset: section,
        supervision: SupervisionSection { n: n_all, n_all },
        hyperparams: base.clone(),
        model: model_config.clone(),
        eval: EvalSection { threshold: Threshold::to_manifest(a.threshold), folds: None, validate: false, checkpoint_every: None },
    }
    .write(&out)?;
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(ABLATION_HEADER)?;
    for mode in modes {
        let n = mode.labeled_count(n_all);
        let split = assign_supervision(&train_split, n, base.seed)?;
        for toggles in grid_for_mode(mode, &DEFAULT_GRID) {
            let hp = base.clone().with_toggles(toggles);
            let config = ModelConfig { stop_gradient_flow: toggles.stop_gradient_flow, ..model_config.clone() };
            let mut model = SegDecNet::<f32>::new(config)?;
            eprintln!("{} N={n} {toggles:?}", mode.label());
            let history: TrainHistory = train_with(&mut model, &split, &hp, |_, _| Ok(None))?;
            debug_assert_eq!(history.epochs.len(), hp.epochs);
            let report = evaluate_split(&model, &test_split, policy)?;
            let row = AblationRow {
                mode,
                n_labeled: n,
                dynamic_balancing: toggles.dynamic_balancing,
                stop_gradient_flow: toggles.stop_gradient_flow,
                distance_transform: (mode != SupervisionMode::Weak).then_some(toggles.distance_transform),
                ap: report.ap,
                fp: report.at_threshold.fp,
                fn_: report.at_threshold.fn_,
            };
            println!("{}", ablation_record(&row).join(","));
            w.write_record(ablation_record(&row))?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let images = read_scores(&a.scores)?;
    let out = match a.out {
        Some(o) => o,
        None => a.scores.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let report = EvalReport::from_scores(images, Threshold::policy(a.threshold))?;
    write_report(&out, &report)?;
    print_report(&report);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_and_size_parsers() {
        assert_eq!(parse_threshold("best").unwrap(), Threshold::Best);
        assert_eq!(parse_threshold("0.25").unwrap(), Threshold::Fixed(0.25));
        assert!(parse_threshold("1.5").is_err());
        assert_eq!(parse_size("512x1408").unwrap(), [512, 1408]);
        assert!(parse_size("512").is_err());
    }

    #[test]
    fn flags_override_presets() {
        let cli = Cli::try_parse_from([
            "segdec", "train", "--dataset", "dagm", "--root", "x", "--lr", "0.2", "--wpos", "4", "--no-grad-stop",
            "--out", "o",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let hp = resolve_hyperparams(&a.hyper, DatasetFormat::Dagm, 5, 10).unwrap();
        assert_eq!((hp.epochs, hp.learning_rate, hp.w_pos, hp.stop_gradient_flow), (70, 0.2, 4.0, false));
        assert!(hp.dynamic_balancing);
        let weak = resolve_hyperparams(&a.hyper, DatasetFormat::Dagm, 0, 10).unwrap();
        assert!(!weak.dynamic_balancing);
    }

    #[test]
    fn ksdd_weak_preset_is_picked_without_labels() {
        assert_eq!(default_preset(DatasetFormat::Ksdd, 0, 52).unwrap(), Preset::KsddWeak);
        assert_eq!(default_preset(DatasetFormat::Ksdd, 5, 52).unwrap(), Preset::Ksdd);
        assert!(default_preset(DatasetFormat::Severstal, 5, 123).is_err());
        assert_eq!(default_preset(DatasetFormat::Severstal, 5, 750).unwrap(), Preset::Severstal { n_all: 750 });
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        assert_eq!(dispatch(["segdec", "frobnicate"]), 2);
        assert_eq!(dispatch(["segdec", "train", "--dataset", "synth"]), 1);
    }
}
