//! Command-line front end. [`run`] parses arguments, dispatches one
//! subcommand and maps the outcome to a process exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::data::{
    augment_dataset, clean_manifest, load_ppm, preprocess, split, synth_generate, AugmentOp, Manifest,
    Split, SynthConfig, DEFAULT_WEIGHT_HIGH, DEFAULT_WEIGHT_LOW,
};
use crate::error::{Error, Result};
use crate::model::{
    build_custom_rop_net, build_mobilenet_like, count_parameters, load_model, param_name, save_model,
    ModelSpec, Parameters,
};
use crate::runtime::{export_bench_csv, fps_bench_suite, normalize_reports, BenchConfig, BenchMode, ExecutionPlan};
use crate::train::{evaluate, export_history, input_size, predict_inputs, train_with_progress, TrainConfig};
use crate::voting::{evaluate_grouped, export_groups_csv, TieRule, VoteOptions, VoteRule};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

pub const THREADS_ENV: &str = "ROPNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ropnet", version, about = "Train, evaluate and benchmark binary retinal image classifiers")]
#[command(after_help = "Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric error.")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Defaults to $ROPNET_THREADS when set.
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Validate inputs and flags without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Drop unreadable, mislabelled, wrongly sized and duplicate images.
    Clean(CleanArgs),
    /// Write augmented copies of every image plus a combined manifest.
    Augment(AugmentArgs),
    /// Assign train/test splits by (patient, eye) group.
    Split(SplitArgs),
    /// Build a freshly initialized model file.
    Init(InitArgs),
    /// Train a model and write its epoch history.
    Train(TrainArgs),
    /// Image-level metrics on one split.
    Eval(EvalArgs),
    /// Per-eye voting metrics on one split.
    VoteEval(VoteEvalArgs),
    /// Score individual images.
    Predict(PredictArgs),
    /// Measure inference throughput.
    Bench(BenchArgs),
    /// Print a model's layers and parameter counts.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Custom,
    Mobilenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `images/` and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub patients: usize,
    #[arg(long, default_value_t = 3)]
    pub images_per_eye: usize,
    /// Fraction of eyes labelled positive.
    #[arg(long, default_value_t = 0.5)]
    pub positive_rate: f64,
    /// Probability that an image is rendered in the low-quality tier.
    #[arg(long, default_value_t = 0.25)]
    pub quality_mix: f64,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cleaned manifest path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV listing each rejected image and the reason.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
}

fn parse_op(s: &str) -> std::result::Result<AugmentOp, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated: rot90, rot180, rot270, flip_h, flip_v, flip_h_rot90, contrast.
    #[arg(long, value_delimiter = ',', value_parser = parse_op, required = true)]
    pub ops: Vec<AugmentOp>,
    /// Output directory; receives `images/` and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Output manifest; defaults to rewriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelShape {
    #[arg(long, value_enum, default_value_t = Arch::Custom)]
    pub arch: Arch,
    /// Channel width multiplier for the custom net: 1.0, 0.5 or 0.25.
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    /// Square input side: 64, 128 or 224.
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Continue from an existing model instead of building a new one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Sampling weight of low-quality images.
    #[arg(long, default_value_t = DEFAULT_WEIGHT_LOW)]
    pub weight_low: f64,
    /// Sampling weight of high-quality images.
    #[arg(long, default_value_t = DEFAULT_WEIGHT_HIGH)]
    pub weight_high: f64,
    /// Train on every row regardless of split, without validation.
    #[arg(long)]
    pub fine_tune: bool,
    #[arg(long, default_value = "history.csv")]
    pub history_out: PathBuf,
    #[arg(long, default_value = "model.ropm")]
    pub model_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct VoteEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Threshold the mean probability instead of counting votes.
    #[arg(long)]
    pub mean_prob: bool,
    /// Break even-sized ties towards the negative class.
    #[arg(long)]
    pub ties_negative: bool,
    /// Optional per-eye CSV of votes and decisions.
    #[arg(long)]
    pub groups_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// PPM image; repeat for several.
    #[arg(long, required = true)]
    pub image: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model file; repeat for several.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Mode to run; repeat for several. Defaults to all three.
    #[arg(long, value_parser = |s: &str| s.parse::<BenchMode>().map_err(|e| e.to_string()))]
    pub mode: Vec<BenchMode>,
    #[arg(long, default_value_t = 46)]
    pub n_images: usize,
    /// Timed repetitions per model and mode.
    #[arg(long, default_value_t = 10)]
    pub runtimes: usize,
    /// Untimed repetitions before timing starts.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Capability(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth_cmd(cli, a),
        Command::Clean(a) => clean_cmd(cli, a),
        Command::Augment(a) => augment_cmd(cli, a),
        Command::Split(a) => split_cmd(cli, a),
        Command::Init(a) => init_cmd(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(a),
        Command::VoteEval(a) => vote_eval_cmd(cli, a),
        Command::Predict(a) => predict_cmd(a),
        Command::Bench(a) => bench_cmd(cli, a),
        Command::Inspect(a) => inspect_cmd(a),
    })
}

fn dry_run(what: &Path) -> Result<()> {
    eprintln!("dry run: would write {}", what.display());
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
}

/// Saves `m` at `out`, re-expressing record paths relative to its directory.
fn write_manifest(m: &Manifest, out: &Path) -> Result<()> {
    ensure_parent(out)?;
    let dir = parent_dir(out);
    let root = if m.root.as_os_str().is_empty() {
        Path::new(".")
    } else {
        m.root.as_path()
    };
    let rebased = if fs::canonicalize(root).ok() == fs::canonicalize(&dir).ok() {
        m.clone()
    } else {
        m.rebase(&dir)?
    };
    rebased.save(out)
}

fn synth_cmd(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_patients: a.patients,
        images_per_eye: a.images_per_eye,
        positive_rate: a.positive_rate,
        quality_mix: a.quality_mix,
        seed: cli.seed,
    };
    cfg.validate()?;
    if cli.dry_run {
        return dry_run(&a.out);
    }
    let m = synth_generate(&cfg, &a.out)?;
    say!("wrote {} images to {}", m.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn clean_cmd(cli: &Cli, a: &CleanArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let (kept, rejected) = clean_manifest(&m);
    for r in &rejected {
        eprintln!("rejected {} ({}): {}", r.path.display(), r.reason, r.detail);
    }
    if cli.dry_run {
        eprintln!("dry run: {} kept, {} rejected", kept.len(), rejected.len());
        return dry_run(&a.out);
    }
    write_manifest(&kept, &a.out)?;
    if let Some(path) = &a.rejects {
        ensure_parent(path)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["path", "reason", "detail"])?;
        for r in &rejected {
            w.write_record([r.path.to_string_lossy().as_ref(), r.reason.as_str(), &r.detail])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    say!("kept {}, rejected {}", kept.len(), rejected.len());
    Ok(())
}

fn augment_cmd(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    m.validate()?;
    if cli.dry_run {
        eprintln!("dry run: {} rows would become {}", m.len(), m.len() * (1 + a.ops.len()));
        return dry_run(&a.out);
    }
    let out = augment_dataset(&m, &a.ops, &a.out)?;
    say!("wrote {} rows to {}", out.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn split_cmd(cli: &Cli, a: &SplitArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let out = split(&m, a.test_fraction, cli.seed)?;
    let path = a.out.as_ref().unwrap_or(&a.manifest);
    let test = out.in_split(Split::Test).count();
    if cli.dry_run {
        eprintln!("dry run: {} train, {test} test", out.len() - test);
        return dry_run(path);
    }
    write_manifest(&out, path)?;
    say!("train {}, test {test}", out.len() - test);
    Ok(())
}

fn build_model(shape: &ModelShape, seed: u64) -> Result<(ModelSpec, Parameters)> {
    match shape.arch {
        Arch::Custom => build_custom_rop_net(shape.input_size, shape.width, seed),
        Arch::Mobilenet => build_mobilenet_like(shape.input_size, seed),
    }
}

fn init_cmd(cli: &Cli, a: &InitArgs) -> Result<()> {
    let (spec, params) = build_model(&a.shape, cli.seed)?;
    if cli.dry_run {
        return dry_run(&a.out);
    }
    ensure_parent(&a.out)?;
    save_model(&spec, &params, &a.out)?;
    say!("wrote {} to {}", spec.name, a.out.display());
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (spec, params) = match &a.model {
        Some(path) => load_model(path)?,
        None => build_model(&a.shape, cli.seed)?,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: cli.seed,
        fine_tune: a.fine_tune,
        weight_low: a.weight_low,
        weight_high: a.weight_high,
        input_size: input_size(&spec)?,
        width_multiplier: spec.width_multiplier,
        ..TrainConfig::default()
    };
    config.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    manifest.validate()?;
    let has_train = a.fine_tune && !manifest.is_empty() || manifest.in_split(Split::Train).next().is_some();
    if !has_train {
        return Err(Error::Data(format!("{} has no training rows", a.manifest.display())));
    }
    if cli.dry_run {
        dry_run(&a.model_out)?;
        return dry_run(&a.history_out);
    }
    let total = config.epochs;
    let (params, history) = train_with_progress(&spec, params, &manifest, &config, |s| {
        let val = match (s.val_loss, s.val_acc) {
            (Some(l), Some(acc)) => format!(" val_loss={l:.4} val_acc={acc:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "epoch {}/{total} train_loss={:.4} train_acc={:.4}{val}",
            s.epoch, s.train_loss, s.train_acc
        );
    })?;
    ensure_parent(&a.model_out)?;
    save_model(&spec, &params, &a.model_out)?;
    ensure_parent(&a.history_out)?;
    export_history(&history, &a.history_out)?;
    say!("wrote {} and {}", a.model_out.display(), a.history_out.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let (spec, params) = load_model(&a.model)?;
    let manifest = Manifest::load(&a.manifest)?;
    let report = evaluate(&spec, &params, &manifest, a.split.into())?;
    say!("{}", to_json(&report));
    Ok(())
}

fn vote_eval_cmd(cli: &Cli, a: &VoteEvalArgs) -> Result<()> {
    let (spec, params) = load_model(&a.model)?;
    let manifest = Manifest::load(&a.manifest)?;
    let opts = VoteOptions {
        rule: if a.mean_prob {
            VoteRule::MeanProbability
        } else {
            VoteRule::Majority
        },
        tie_rule: if a.ties_negative {
            TieRule::Negative
        } else {
            TieRule::Positive
        },
        ..VoteOptions::default()
    };
    let report = evaluate_grouped(&spec, &params, &manifest, a.split.into(), &opts)?;
    if let Some(path) = &a.groups_out {
        if cli.dry_run {
            dry_run(path)?;
        } else {
            ensure_parent(path)?;
            export_groups_csv(&report.groups, path)?;
        }
    }
    let ties = report.groups.iter().filter(|g| g.tie_broken).count();
    say!(
        "{}",
        to_json(&json!({
            "image_level": report.image_level,
            "eye_level": report.eye_level,
            "groups": report.groups.len(),
            "ties_broken": ties,
        }))
    );
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let (spec, params) = load_model(&a.model)?;
    let size = input_size(&spec)?;
    let inputs = a
        .image
        .iter()
        .map(|p| preprocess(&load_ppm(p)?, size))
        .collect::<Result<Vec<_>>>()?;
    let probs = predict_inputs(&spec, &params, &inputs.iter().collect::<Vec<_>>())?;
    say!("path,probability,decision");
    for (path, p) in a.image.iter().zip(probs) {
        say!("{},{p:.6},{}", path.display(), (p as f64 >= 0.5) as u8);
    }
    Ok(())
}

fn bench_cmd(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let modes = if a.mode.is_empty() {
        BenchMode::ALL.to_vec()
    } else {
        a.mode.clone()
    };
    let config = BenchConfig {
        n_images: a.n_images,
        runtimes: a.runtimes,
        warmup: a.warmup,
        seed: cli.seed,
    };
    if config.n_images == 0 || config.runtimes == 0 {
        return Err(Error::param("--n-images and --runtimes must be at least 1"));
    }
    let loaded = a.model.iter().map(load_model).collect::<Result<Vec<_>>>()?;
    if cli.dry_run {
        return a.out.as_deref().map_or(Ok(()), dry_run);
    }
    let models: Vec<_> = loaded.iter().map(|(s, p)| (s, p)).collect();
    let mut reports = fps_bench_suite(&models, &modes, &config)?;
    for r in &reports {
        eprintln!("{} {}: {:.2} ± {:.2} fps", r.model, r.mode, r.mean_fps, r.std_fps);
    }
    normalize_reports(&mut reports);
    say!("model,mode,mean_fps,normalized_fps");
    for r in &reports {
        say!("{},{},{:.3},{:.4}", r.model, r.mode, r.mean_fps, r.normalized_fps);
    }
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        export_bench_csv(&reports, out)?;
    }
    Ok(())
}

fn inspect_cmd(a: &InspectArgs) -> Result<()> {
    let (spec, params) = load_model(&a.model)?;
    let shapes = spec.shapes()?;
    say!("model: {}", spec.name);
    say!("input: {:?}", spec.input_shape);
    say!("width multiplier: {}", spec.width_multiplier);
    say!("{:>5}  {:<16} {:<16} {:>10}", "layer", "kind", "output", "params");
    for (i, layer) in spec.layers.iter().enumerate() {
        let n: usize = params
            .iter()
            .filter(|(name, _)| name.starts_with(&param_name(i, "")))
            .map(|(_, p)| p.tensor.len())
            .sum();
        say!(
            "{i:>5}  {:<16} {:<16} {n:>10}",
            layer.kind_name(),
            format!("{:?}", shapes[i + 1])
        );
    }
    let count = count_parameters(&spec, &params)?;
    say!("trainable parameters: {}", count.trainable);
    say!("total parameters: {}", count.total);
    let plan = ExecutionPlan::new(&spec, &params, 1)?;
    say!("planned arena bytes (batch 1): {}", plan.arena_bytes());
    Ok(())
}
