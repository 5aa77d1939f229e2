//! `csilab` subcommands.
//!
//! Every command writes its artifacts plus a `run.toml` manifest into one
//! output directory. Without `--out` the directory is `<root>/<command>`,
//! where the root is `$CSILAB_OUT` or `csilab-out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use csilab_core::baseline::{run_baseline_on, BaselineError};
use csilab_core::config::{ConfigError, LabConfig};
use csilab_core::dataset::{build_dataset, format::write_atomic, load_dataset, save_dataset, DatasetError};
use csilab_core::eval::{write_report, ConfusionMatrix, EvalError, MethodResult, RunCurves};
use csilab_core::model::{
    evaluate_split, load_checkpoint, save_checkpoint, train_with, CheckpointMeta, ModelError,
};
use csilab_core::nn::NnError;
use csilab_core::verify::{run_gradient_suite, Scale, SuiteOptions};
use csilab_core::{Model, Split, TrainHistory};

pub const OUT_ENV: &str = "CSILAB_OUT";
pub const MANIFEST: &str = "run.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } | ModelError::Nn(NnError::NonFinite(_)) => CliError::Numeric(e.to_string()),
            e => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "csilab", version, about = "Synthetic WiFi CSI activity recognition")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset.
    Gen(GenArgs),
    /// Train a C3D model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the temporal-mean PCA + k-NN baseline.
    Baseline(BaselineArgs),
    /// Finite-difference check of every layer and the end-to-end network.
    Gradcheck(GradcheckArgs),
    /// Combine eval, baseline and training outputs into one report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Lab config file (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Spatial and temporal attention (overrides the config file).
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Method name in the report (default `c3d` or `c3d_attention`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Neighbours (overrides the config file).
    #[arg(long)]
    pub k: Option<usize>,
    /// PCA components (overrides the config file).
    #[arg(long)]
    pub p: Option<usize>,
    /// Split the pipeline is fitted on.
    #[arg(long, value_enum, default_value = "train")]
    pub fit_split: SplitArg,
    /// Split the pipeline is evaluated on.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Reduced,
    Desk,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reduced")]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt the named check's adjoint; a negative control that must fail.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output directories of `eval`, `baseline` or `train` runs.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// Written at the end of every successful command.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub duration_seconds: f64,
    pub artifacts: Vec<String>,
    pub config: Option<LabConfig>,
}

/// Evaluation result persisted for `report`.
#[derive(Debug, Serialize, Deserialize)]
struct ResultFile {
    name: String,
    split: Split,
    confusion: ConfusionMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryFile {
    name: String,
    history: TrainHistory,
}

const RESULT_FILE: &str = "result.toml";
const HISTORY_FILE: &str = "history.toml";

fn out_dir(explicit: &Option<PathBuf>, command: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("csilab-out"));
        root.join(command)
    })
}

fn load_config(common: &Common) -> Result<LabConfig> {
    let mut cfg = match &common.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    // One master seed drives everything.
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

struct Outcome {
    out: PathBuf,
    seed: Option<u64>,
    config: Option<LabConfig>,
    artifacts: Vec<String>,
    /// Lines echoed to stdout.
    lines: Vec<String>,
}

/// Parse `args` (including the program name) and run; returns stdout lines.
pub fn run<I, T>(args: I) -> Result<Vec<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                return Ok(vec![e.to_string().trim_end().to_string()])
            }
            _ => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
        },
    };
    let start = Instant::now();
    let dispatch = || match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|o| ("gen", o)),
        Command::Train(a) => cmd_train(a).map(|o| ("train", o)),
        Command::Eval(a) => cmd_eval(a).map(|o| ("eval", o)),
        Command::Baseline(a) => cmd_baseline(a).map(|o| ("baseline", o)),
        Command::Gradcheck(a) => cmd_gradcheck(a).map(|o| ("gradcheck", o)),
        Command::Report(a) => cmd_report(a).map(|o| ("report", o)),
    };
    let (name, outcome) = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?
            .install(dispatch)?,
        None => dispatch()?,
    };
    let manifest = RunManifest {
        command: name.to_string(),
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: outcome.seed,
        duration_seconds: start.elapsed().as_secs_f64(),
        artifacts: outcome.artifacts,
        config: outcome.config,
    };
    write_toml(&outcome.out.join(MANIFEST), &manifest)?;
    Ok(outcome.lines)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn cmd_gen(a: &GenArgs) -> Result<Outcome> {
    let cfg = load_config(&a.common)?;
    let out = out_dir(&a.common.out, "gen");
    let specs = cfg.activity_specs().map_err(CliError::Usage)?;
    let ds = build_dataset(&specs, cfg.dataset.per_class, &cfg.dataset.windowing, &cfg.channel, cfg.seed)?;
    mkdir(&out)?;
    save_dataset(&ds, &out)?;
    let n_train = ds.indices(Split::Train).len();
    let lines = vec![format!(
        "dataset: {} classes, {} clips ({} train, {} test) -> {}",
        ds.n_classes(),
        ds.clips.len(),
        n_train,
        ds.clips.len() - n_train,
        out.display()
    )];
    Ok(Outcome {
        out,
        seed: Some(cfg.seed),
        config: Some(cfg),
        artifacts: vec!["dataset.toml".into(), "clips.bin".into(), "features.bin".into()],
        lines,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    if let Some(att) = a.attention {
        cfg.model.use_spatial_attention = att == Switch::On;
        cfg.model.use_temporal_attention = att == Switch::On;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.train.validate()?;
    let ds = load_dataset(&a.data)?;
    let shape = ds.clip_shape().ok_or_else(|| CliError::Usage("dataset has no clips".into()))?;
    let model_cfg = cfg.model.to_config(ds.n_classes(), shape);
    let mut model = Model::build(model_cfg, cfg.seed)?;
    let mut lines = Vec::new();
    let history = train_with(&mut model, &ds, &cfg.train, |s| {
        let line = format!(
            "epoch {:>3}  loss {:.4}  train {:.3}  test {:.3}  lr {:e}",
            s.epoch, s.train_loss, s.train_accuracy, s.test_accuracy, s.learning_rate
        );
        eprintln!("{line}");
        lines.push(line);
    })?;
    let out = out_dir(&a.common.out, "train");
    mkdir(&out)?;
    let meta = CheckpointMeta { epoch: cfg.train.epochs, class_names: ds.class_names.clone(), normalization: ds.norm };
    save_checkpoint(&model, &meta, &out)?;
    let name = method_name(&model);
    write_toml(&out.join(HISTORY_FILE), &HistoryFile { name, history })?;
    Ok(Outcome {
        out,
        seed: Some(cfg.seed),
        config: Some(cfg),
        artifacts: vec!["checkpoint.toml".into(), "params.bin".into(), HISTORY_FILE.into()],
        lines,
    })
}

fn method_name(model: &Model) -> String {
    let c = model.config();
    if c.use_spatial_attention || c.use_temporal_attention {
        "c3d_attention".into()
    } else {
        "c3d".into()
    }
}

fn write_result(out: &Path, name: String, split: Split, confusion: ConfusionMatrix) -> Result<(Vec<String>, String)> {
    mkdir(out)?;
    let method = MethodResult { name: name.clone(), confusion: confusion.clone() };
    let mut artifacts = write_report(out, &[method], &[])?;
    let acc = csilab_core::eval::overall_accuracy(&confusion)?;
    let line = format!("{name}: accuracy {:.2}% ({}/{})", 100.0 * acc, confusion.trace(), confusion.total());
    write_toml(&out.join(RESULT_FILE), &ResultFile { name, split, confusion })?;
    artifacts.push(RESULT_FILE.into());
    Ok((artifacts, line))
}

fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    if ds.clip_shape() != Some(model.config().input_shape) {
        return Err(CliError::Usage(format!(
            "dataset clip shape {:?} does not match checkpoint input shape {:?}",
            ds.clip_shape(),
            model.config().input_shape
        )));
    }
    if ds.class_names != meta.class_names {
        return Err(CliError::Usage("dataset classes do not match the checkpoint".into()));
    }
    // Evaluate with the normalisation the model was trained under.
    let mut ds = ds;
    ds.norm = meta.normalization;
    let split: Split = a.split.into();
    let pairs = evaluate_split(&model, &ds, split)?;
    let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let cm = ConfusionMatrix::from_labels(&truth, &pred, ds.class_names.clone())?;
    let out = out_dir(&a.out, "eval");
    let name = a.name.clone().unwrap_or_else(|| method_name(&model));
    let (artifacts, line) = write_result(&out, name, split, cm)?;
    Ok(Outcome { out, seed: None, config: None, artifacts, lines: vec![line] })
}

fn cmd_baseline(a: &BaselineArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    if let Some(k) = a.k {
        cfg.baseline.k = k;
    }
    if let Some(p) = a.p {
        cfg.baseline.components = p;
    }
    let ds = load_dataset(&a.data)?;
    let split: Split = a.split.into();
    let cm = run_baseline_on(&ds, &cfg.baseline, a.fit_split.into(), split)?;
    let out = out_dir(&a.common.out, "baseline");
    let (artifacts, line) = write_result(&out, "pca_knn".into(), split, cm)?;
    Ok(Outcome { out, seed: Some(cfg.seed), config: Some(cfg), artifacts, lines: vec![line] })
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let opts = SuiteOptions {
        tolerance: a.tolerance,
        seed: a.seed,
        scale: match a.scale {
            ScaleArg::Reduced => Scale::Reduced,
            ScaleArg::Desk => Scale::Desk,
        },
        corrupt: a.corrupt.clone(),
        ..Default::default()
    };
    let results = run_gradient_suite(&opts);
    let mut table = String::from("check\tmax_rel_error\tcoords\ttolerance\tstatus\n");
    let mut lines = vec![format!("{:<24} {:>12} {:>7}  status", "check", "max_rel_err", "coords")];
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        table.push_str(&format!("{}\t{:e}\t{}\t{:e}\t{status}\n", r.name, r.max_rel_error, r.coords_checked, r.tolerance));
        lines.push(format!("{:<24} {:>12.3e} {:>7}  {status}", r.name, r.max_rel_error, r.coords_checked));
    }
    let out = out_dir(&a.out, "gradcheck");
    mkdir(&out)?;
    write_atomic(&out.join("gradcheck.tsv"), table.as_bytes())?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if !failed.is_empty() {
        for l in &lines {
            println!("{l}");
        }
        return Err(CliError::Verification(failed.join(", ")));
    }
    Ok(Outcome { out, seed: Some(a.seed), config: None, artifacts: vec!["gradcheck.tsv".into()], lines })
}

fn cmd_report(a: &ReportArgs) -> Result<Outcome> {
    let mut methods = Vec::new();
    let mut curves = Vec::new();
    for dir in &a.inputs {
        let result = dir.join(RESULT_FILE);
        let history = dir.join(HISTORY_FILE);
        let mut found = false;
        if result.exists() {
            let r: ResultFile = read_toml(&result)?;
            methods.push(MethodResult { name: r.name, confusion: r.confusion });
            found = true;
        }
        if history.exists() {
            let h: HistoryFile = read_toml(&history)?;
            curves.push(RunCurves { name: h.name, history: h.history });
            found = true;
        }
        if !found {
            return Err(CliError::Usage(format!(
                "{}: no {RESULT_FILE} or {HISTORY_FILE}; expected an eval, baseline or train output",
                dir.display()
            )));
        }
    }
    let out = out_dir(&a.out, "report");
    let artifacts = write_report(&out, &methods, &curves)?;
    let summary = fs::read_to_string(out.join("summary.tsv")).map_err(|e| io_err(&out, e))?;
    Ok(Outcome { out, seed: None, config: None, artifacts, lines: summary.lines().map(String::from).collect() })
}
