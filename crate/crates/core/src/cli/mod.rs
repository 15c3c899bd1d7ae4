//! `lars-ue` command line. Exit codes: 0 success, 1 runtime error, 2 usage
//! error (bad flags, unknown component names, missing inputs).

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::lars::Association;
use crate::synth::SynthTask;
pub use config::RunConfig;
use config::{Aggregator, Baseline, EquivalenceKind, Normalization, ReportFormat, ScorerKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "lars-ue", version, about = "Probability-based uncertainty estimation for LLM generations")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Turn labeled samples into a calibration file.
    BuildCalib(BuildCalibArgs),
    /// Train a LARS scorer on a calibration file.
    Train(TrainArgs),
    /// Score every generation with one scoring function.
    Score(ScoreArgs),
    /// AUROC and PRR for every scorer x aggregator pair plus baselines.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the LARS gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "hedge")]
    pub task: SynthTask,
    #[arg(long, default_value_t = 100)]
    pub questions: usize,
    #[arg(long, default_value_t = 5)]
    pub generations: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildCalibArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep one example per unique (question, answer) pair.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dedup: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
}

#[derive(Debug, Args)]
pub struct LarsOverrides {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub association: Option<AssociationArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trainable_prob_embeddings: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_question: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub text_only: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub prob_only: Option<bool>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum AssociationArg {
    Sequential,
    Additive,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Directory receiving model.lars, metrics.csv and config.toml.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub lars: LarsOverrides,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    #[arg(long = "scorer", value_enum, value_delimiter = ',')]
    pub scorers: Vec<ScorerKind>,
    /// LARS model file, required by the `lars` scorer.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSONL of precomputed token weights for the `weighted` scorer.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub scoring: ScorerArgs,
    #[arg(long = "aggregator", value_enum, value_delimiter = ',')]
    pub aggregators: Vec<Aggregator>,
    #[arg(long = "baseline", value_enum, value_delimiter = ',')]
    pub baselines: Vec<Baseline>,
    #[arg(long, value_enum)]
    pub equivalence: Option<EquivalenceKind>,
    #[arg(long)]
    pub rouge_threshold: Option<f64>,
    #[arg(long)]
    pub entailment_url: Option<String>,
    #[arg(long)]
    pub sentsar_temperature: Option<f64>,
    #[arg(long)]
    pub num_eigvecs: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_most_likely: Option<bool>,
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = crate::lars::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = crate::lars::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Perturbs the analytic gradient of one tensor (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

impl LarsOverrides {
    fn apply(&self, c: &mut crate::lars::LarsConfig) {
        set(&mut c.d, self.d);
        set(&mut c.layers, self.layers);
        set(&mut c.heads, self.heads);
        set(&mut c.k, self.k);
        set(&mut c.vocab_size, self.vocab_size);
        set(&mut c.max_len, self.max_len);
        set(
            &mut c.association,
            self.association.map(|a| match a {
                AssociationArg::Sequential => Association::Sequential,
                AssociationArg::Additive => Association::Additive,
            }),
        );
        set(&mut c.prob_embeddings_trainable, self.trainable_prob_embeddings);
        set(&mut c.include_question, self.include_question);
        set(&mut c.text_only, self.text_only);
        set(&mut c.prob_only, self.prob_only);
    }
}

impl ScorerArgs {
    fn apply(&self, c: &mut RunConfig) {
        if !self.scorers.is_empty() {
            c.scoring.scorers = self.scorers.clone();
        }
        set_path(&mut c.paths.model, &self.model);
        set_path(&mut c.paths.weights, &self.weights);
        set(&mut c.scoring.normalization, self.normalization);
    }
}

/// Folds the flags of `command` into `base`.
pub fn resolve(base: RunConfig, command: &Command) -> RunConfig {
    let mut c = base;
    match command {
        Command::Synth(a) => {
            set(&mut c.seed, a.seed);
            set_path(&mut c.paths.out, &a.out);
        }
        Command::BuildCalib(a) => {
            set_path(&mut c.paths.data, &a.data);
            set_path(&mut c.paths.out, &a.out);
            set(&mut c.data.dedup, a.dedup);
            set(&mut c.data.strict, a.strict);
        }
        Command::Train(a) => {
            set_path(&mut c.paths.calib, &a.calib);
            set_path(&mut c.paths.out, &a.out);
            set(&mut c.seed, a.seed);
            set(&mut c.data.holdout_fraction, a.holdout_fraction);
            set(&mut c.train.epochs, a.epochs);
            set(&mut c.train.batch_size, a.batch_size);
            set(&mut c.train.lr, a.lr);
            a.lars.apply(&mut c.lars);
        }
        Command::Score(a) => {
            set_path(&mut c.paths.data, &a.data);
            set_path(&mut c.paths.out, &a.out);
            a.scoring.apply(&mut c);
        }
        Command::Evaluate(a) => {
            set_path(&mut c.paths.data, &a.data);
            set_path(&mut c.paths.out, &a.out);
            set(&mut c.seed, a.seed);
            a.scoring.apply(&mut c);
            if !a.aggregators.is_empty() {
                c.evaluate.aggregators = a.aggregators.clone();
            }
            if !a.baselines.is_empty() {
                c.evaluate.baselines = a.baselines.clone();
            }
            set(&mut c.oracle.equivalence, a.equivalence);
            set(&mut c.oracle.rouge_threshold, a.rouge_threshold);
            if a.entailment_url.is_some() {
                c.oracle.entailment_url.clone_from(&a.entailment_url);
            }
            set(&mut c.oracle.sentsar_temperature, a.sentsar_temperature);
            set(&mut c.oracle.num_eigvecs, a.num_eigvecs);
            set(&mut c.evaluate.include_most_likely, a.include_most_likely);
            set(&mut c.evaluate.format, a.format);
        }
        Command::Gradcheck(a) => {
            set(&mut c.seed, a.seed);
        }
    }
    c.lars.seed = c.seed;
    c
}

pub(crate) fn existing(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let p = required(path, what)?;
    if !p.exists() {
        return Err(usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

pub(crate) fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| usage(format!("no {what} given (flag or [paths] in the config)")))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("config: {e}"))),
        None => Ok(RunConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve(load_config(cli.config.as_deref())?, &cli.command);
    match &cli.command {
        Command::Synth(a) => commands::synth(&config, a),
        Command::BuildCalib(_) => commands::build_calib(&config),
        Command::Train(_) => commands::train(&config),
        Command::Score(_) => commands::score(&config),
        Command::Evaluate(_) => commands::evaluate(&config),
        Command::Gradcheck(a) => commands::gradcheck(&config, a),
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
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
