//! The `percept-age` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 unsupported operation, 4 I/O or data-file error.

mod config;
pub mod repro;

pub use config::{ResolvedTrainRun, RunConfig};

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::architecture::{
    count_trainable_params, forward, load_checkpoint, save_checkpoint, ArchitectureError, Inputs, ModelVariant,
    NetworkSpec, Scale,
};
use crate::dataset::{
    encode_attributes, generate_synthetic, load_annotations, load_dataset, load_image, select_split, write_dataset,
    AnnotationRecord, DatasetError, Gender, Happiness, Makeup, ObserverGender, Race, Split,
};
use crate::evaluation::{
    build_report, emit_report, observer_eval, predict, predict_observers, EvaluationError, PredictionSet,
};
use crate::training::{run_case, Monitor, TargetLabel, TrainingError};
use repro::{run_case_ordering, CaseOrderingConfig, Ordering, ReproError};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const THREADS_ENV: &str = "PERCEPT_AGE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Failed(_) => 1,
            Self::Config(_) => 2,
            Self::Unsupported(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidSpec(_) | DatasetError::Json(_) | DatasetError::AgeOutOfRange(_) => {
                Self::Config(e.to_string())
            }
            DatasetError::Tensor(_) => Self::Failed(e.to_string()),
            _ => Self::Io(e.to_string()),
        }
    }
}

impl From<ArchitectureError> for CliError {
    fn from(e: ArchitectureError) -> Self {
        match e {
            ArchitectureError::Checkpoint { .. } | ArchitectureError::ParamMismatch(_) => Self::Io(e.to_string()),
            ArchitectureError::Input(_) | ArchitectureError::InvalidStage(_) => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::InvalidConfig(_) | TrainingError::EmptyDataset(_) | TrainingError::MissingLabel { .. } => {
                Self::Config(e.to_string())
            }
            TrainingError::Dataset(d) => d.into(),
            TrainingError::Architecture(a) => a.into(),
            TrainingError::Io(_) | TrainingError::Csv(_) => Self::Io(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Io { .. } | EvaluationError::Csv(_) | EvaluationError::Json(_) => Self::Io(e.to_string()),
            EvaluationError::Architecture(a) => a.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<ReproError> for CliError {
    fn from(e: ReproError) -> Self {
        match e {
            ReproError::Dataset(e) => e.into(),
            ReproError::Training(e) => e.into(),
            ReproError::Evaluation(e) => e.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "percept-age", version, about = "Apparent and real age regression with attribute-conditioned bias")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic biased-perception dataset.
    Synth(SynthArgs),
    /// Train a case-study variant (desk scale) in two stages.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split and write the report.
    Eval(EvalArgs),
    /// Build the report from a prediction CSV and annotations.
    Analyze(AnalyzeArgs),
    /// Print the number of trainable parameters of a variant.
    Params(ParamsArgs),
    /// Predict the apparent (and real) age of one image.
    Predict(PredictArgs),
    /// Run the case-ordering seed sweep and print the pass/fail table.
    #[command(alias = "repro_case_ordering")]
    ReproCaseOrdering(ReproArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate for both stages unless `--lr-stage2` is also given.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_stage2: Option<f64>,
    #[arg(long)]
    pub max_epochs_stage1: Option<usize>,
    #[arg(long)]
    pub max_epochs_stage2: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// apparent, real or dual.
    #[arg(long, value_parser = parse_json_enum::<TargetLabel>)]
    pub target_label: Option<TargetLabel>,
    /// apparent_mae, real_loss or dual_loss.
    #[arg(long, value_parser = parse_json_enum::<Monitor>)]
    pub monitor: Option<Monitor>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory or checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub variant: ModelVariant,
    #[arg(long, default_value = "desk")]
    pub scale: Scale,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub gender: Option<Gender>,
    #[arg(long)]
    pub race: Option<Race>,
    #[arg(long)]
    pub happiness: Option<Happiness>,
    #[arg(long)]
    pub makeup: Option<Makeup>,
    #[arg(long)]
    pub observer: Option<ObserverGender>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// JSON sweep settings; flags override them.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs_stage1: Option<usize>,
    #[arg(long)]
    pub max_epochs_stage2: Option<usize>,
    /// Write the per-seed results as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Evaluation parallelism from `PERCEPT_AGE_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let config = RunConfig::load_opt(args.config.as_deref())?;
    let mut spec = config.synthetic.unwrap_or_default();
    if let Some(n) = args.samples {
        spec.sample_count = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = args
        .out
        .or(config.out)
        .ok_or_else(|| CliError::Config("no output directory (--out)".into()))?;
    let samples = generate_synthetic(&spec)?;
    write_dataset(&samples, &out, Some(&spec))?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let config = RunConfig::load_opt(args.config.as_deref())?;
    let variant = args.variant.or(config.variant).unwrap_or(ModelVariant::Case3);
    let scale = args.scale.or(config.scale).unwrap_or(Scale::Desk);
    if scale == Scale::FullVgg16 {
        return Err(CliError::Unsupported(
            "full-scale VGG16 training needs ImageNet-pretrained weights, which are not bundled; \
             use `--scale desk` to train, or `params --scale full` for parameter counts"
                .into(),
        ));
    }
    let mut train = config.train_config(variant)?;
    if let Some(seed) = args.seed {
        train.seed = seed;
    }
    if let Some(lr) = args.lr {
        train.lr_stage1 = lr;
        train.lr_stage2 = lr;
    }
    if let Some(lr) = args.lr_stage2 {
        train.lr_stage2 = lr;
    }
    if let Some(v) = args.max_epochs_stage1 {
        train.max_epochs_stage1 = v;
    }
    if let Some(v) = args.max_epochs_stage2 {
        train.max_epochs_stage2 = v;
    }
    if let Some(v) = args.patience {
        train.patience = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.target_label {
        train.target_label = v;
    }
    if let Some(v) = args.monitor {
        train.monitor = v;
    }
    train.validate_for(variant)?;
    let data = args
        .data
        .or(config.data)
        .ok_or_else(|| CliError::Config("no dataset directory (--data)".into()))?;
    let out = args
        .out
        .or(config.out)
        .ok_or_else(|| CliError::Config("no output directory (--out)".into()))?;

    let samples = load_dataset(&data)?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let resolved = ResolvedTrainRun {
        variant,
        scale,
        data: data.clone(),
        train: train.clone(),
    };
    write_json(&out.join(RESOLVED_CONFIG_FILE), &resolved)?;

    let outcome = run_case(variant, scale, &samples, &train)?;
    let mut meta = outcome.checkpoint.metadata();
    meta["target_label"] = serde_json::to_value(train.target_label).expect("serialisable");
    meta["stage1_best"] = outcome.stage1.metadata();
    save_checkpoint(out.join(CHECKPOINT_DIR), &outcome.checkpoint.params, meta)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    outcome
        .log
        .write_csv(BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?))?;
    let timing_path = out.join(TIMING_FILE);
    outcome
        .log
        .write_timing_csv(BufWriter::new(File::create(&timing_path).map_err(io_err(&timing_path))?))?;
    println!(
        "{variant}: best stage-{} epoch {}, validation MAE {:.3} years ({:?}); run written to {}",
        outcome.checkpoint.stage,
        outcome.checkpoint.epoch,
        outcome.checkpoint.val_mae,
        outcome.checkpoint.metric,
        out.display()
    );
    Ok(())
}

/// Accepts either a run directory or the checkpoint directory inside it.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(crate::architecture::MANIFEST_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn records_of(samples: &[crate::dataset::ImageSample]) -> Vec<AnnotationRecord> {
    samples.iter().map(|s| s.record.clone()).collect()
}

fn write_predictions(path: &Path, preds: &PredictionSet) -> Result<(), CliError> {
    preds.write_csv(BufWriter::new(File::create(path).map_err(io_err(path))?))?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let threads = threads_from_env()?;
    let (spec, params, _) = load_checkpoint(checkpoint_dir(&args.checkpoint))?;
    let samples = load_dataset(&args.data)?;
    let eval = select_split(&samples, args.split);
    if eval.is_empty() {
        return Err(CliError::Config(format!("dataset has no `{}` samples", args.split)));
    }
    let train = records_of(&select_split(&samples, Split::Train));
    let records = records_of(&eval);
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let preds = predict(&spec, &params, &eval, None, threads)?;
    write_predictions(&args.out.join(PREDICTIONS_FILE), &preds)?;
    let observer = if spec.variant.uses_observer() && records.iter().all(|r| r.apparent_by_observer.is_some()) {
        let (f, m) = predict_observers(&spec, &params, &eval, threads)?;
        write_predictions(&args.out.join("predictions_female_observer.csv"), &f)?;
        write_predictions(&args.out.join("predictions_male_observer.csv"), &m)?;
        Some(observer_eval(&f, &m, &records)?)
    } else {
        None
    };
    let report = build_report(&preds, &records, &train, observer)?;
    emit_report(&report, &args.out)?;
    println!(
        "{} on {} {} samples: apparent MAE {:.3}, real MAE {:.3} years",
        spec.variant,
        report.n,
        args.split,
        report.mae_apparent,
        report.mae_real
    );
    if let Some(o) = report.observer {
        println!(
            "observer female: matched {:.3}, cross {:.3}; observer male: matched {:.3}, cross {:.3}",
            o.female.matched, o.female.cross, o.male.matched, o.male.cross
        );
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let file = File::open(&args.predictions).map_err(io_err(&args.predictions))?;
    let preds = PredictionSet::read_csv(file)?;
    let all = load_annotations(&args.annotations, None)?;
    let train: Vec<_> = all.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let report = build_report(&preds, &all, &train, None)?;
    emit_report(&report, &args.out)?;
    println!(
        "{} predictions: apparent MAE {:.3}, real MAE {:.3} years; report in {}",
        report.n,
        report.mae_apparent,
        report.mae_real,
        args.out.display()
    );
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<(), CliError> {
    let spec = NetworkSpec::new(args.variant, args.scale);
    println!("{}", count_trainable_params(&spec));
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let (spec, params, _) = load_checkpoint(checkpoint_dir(&args.checkpoint))?;
    let pixels = load_image(&args.image)?;
    if spec.variant.uses_observer() != args.observer.is_some() {
        return Err(CliError::Config(if args.observer.is_some() {
            format!("{} takes no --observer", spec.variant)
        } else {
            format!("{} needs --observer female|male", spec.variant)
        }));
    }
    let attrs = match spec.attribute_len {
        None => None,
        Some(_) => {
            let missing = |name: &str| CliError::Config(format!("{} needs --{name}", spec.variant));
            let mut record = AnnotationRecord {
                image_id: String::new(),
                split: Split::Test,
                real_age: 0.0,
                apparent_mean: 0.0,
                apparent_std: 0.0,
                gender: args.gender.ok_or_else(|| missing("gender"))?,
                race: args.race.ok_or_else(|| missing("race"))?,
                happiness: args.happiness.ok_or_else(|| missing("happiness"))?,
                makeup: args.makeup.ok_or_else(|| missing("makeup"))?,
                apparent_by_observer: None,
            };
            record.image_id = args.image.display().to_string();
            Some(encode_attributes(&record, args.observer).to_tensor())
        }
    };
    let out = forward(&spec, &params, Inputs::new(&pixels, attrs.as_ref()))?;
    match args.observer {
        Some(g) => println!("apparent_age ({g} observer): {:.2}", out.apparent_pred),
        None => println!("apparent_age: {:.2}", out.apparent_pred),
    }
    if let Some(r) = out.real_pred {
        println!("real_age: {r:.2}");
    }
    Ok(())
}

fn cmd_repro(args: ReproArgs) -> Result<(), CliError> {
    let mut config: CaseOrderingConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => CaseOrderingConfig::default(),
    };
    if let Some(n) = args.seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(v) = args.max_epochs_stage1 {
        config.max_epochs_stage1 = v;
    }
    if let Some(v) = args.max_epochs_stage2 {
        config.max_epochs_stage2 = v;
    }
    let report = run_case_ordering(&config, |line| eprintln!("{line}"))?;
    print!("{}", report.table());
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if Ordering::ALL.iter().all(|&o| report.passes(o)) {
        Ok(())
    } else {
        Err(CliError::Failed("at least one ordering did not hold".into()))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Params(a) => cmd_params(a),
        Command::Predict(a) => cmd_predict(a),
        Command::ReproCaseOrdering(a) => cmd_repro(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("percept-age: {e}");
            e.exit_code()
        }
    }
}
