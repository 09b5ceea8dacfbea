mod commands;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use perishability::config::{Config, CrossEval};
use perishability::curves::FitError;
use perishability::decay::DecayError;
use perishability::pipeline::PipelineError;
use perishability::theory::TheoryError;
use thiserror::Error;

/// Measure how quickly time-stamped text data loses predictive value.
#[derive(Debug, Parser)]
#[command(name = "perish", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Working directory holding all intermediate artifacts.
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// JSON configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendKind {
    Ngram,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CrossEvalArg {
    None,
    ReferenceSize,
    All,
}

impl From<CrossEvalArg> for CrossEval {
    fn from(c: CrossEvalArg) -> Self {
        match c {
            CrossEvalArg::None => CrossEval::None,
            CrossEvalArg::ReferenceSize => CrossEval::ReferenceSize,
            CrossEvalArg::All => CrossEval::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelKind {
    Exponential,
    Drift,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse flat corpus files, filter by score and store documents.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Keep only items with at least this score (config `min_score` otherwise).
        #[arg(long)]
        min_score: Option<i64>,
        /// Accepted timestamp range, `<start>..<end>` in UTC seconds.
        #[arg(long)]
        range: Option<String>,
    },
    /// Group documents by topic and month, and split each period.
    Slice {
        #[arg(long)]
        topic: Option<String>,
    },
    /// Attach the halving subset ladder to every slice.
    Ladder,
    /// Train models on every (period, rung, seed) and record losses.
    Train {
        #[arg(long, value_enum, default_value = "ngram")]
        backend: BackendKind,
        /// Command line of the external backend (config `external_backend` otherwise).
        #[arg(long)]
        backend_command: Option<String>,
        /// Identifier recorded for external runs.
        #[arg(long, default_value = "external")]
        backend_id: String,
        #[arg(long)]
        topic: Option<String>,
        /// Period range such as `2012-10..2013-10`.
        #[arg(long)]
        periods: Option<String>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum)]
        cross_eval: Option<CrossEvalArg>,
    },
    /// Fit native learning curves from the manifest.
    Curves,
    /// Build effectiveness series from the native curves.
    Effectiveness {
        /// Reference period (earliest fitted period otherwise).
        #[arg(long)]
        reference_period: Option<String>,
        /// Reference training size (config or largest trained size otherwise).
        #[arg(long)]
        reference_size: Option<usize>,
    },
    /// Fit exponential decay per topic.
    Decay,
    /// Pairwise decay-rate tests between topics.
    Pairwise,
    /// Compare exponential and power-law decay per topic.
    Forms,
    /// Greedy off-loading of old data under an equivalence model.
    Offload {
        #[arg(long, value_enum, default_value = "exponential")]
        model: ModelKind,
        #[arg(long, default_value_t = 0.2)]
        mu: f64,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        #[arg(long, default_value_t = 0.3)]
        b: f64,
        /// Slope of the linear drift term.
        #[arg(long, default_value_t = 0.1)]
        slope: f64,
        /// Dataset size.
        #[arg(long)]
        n: f64,
        /// Comma-separated bin weights, freshest first.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        /// Bin width in years.
        #[arg(long, default_value_t = 1.0 / 12.0)]
        bin_width: f64,
    },
    /// Generate a drifting synthetic corpus in the flat format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Drift speed per year.
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        #[arg(long, default_value = "2012-10..2013-09")]
        periods: String,
        #[arg(long, default_value_t = 200_000)]
        words_per_period: usize,
        #[arg(long, default_value_t = 200)]
        words_per_document: usize,
        #[arg(long, default_value = "synthetic")]
        topic: String,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long, default_value_t = 8)]
        branching: usize,
        #[arg(long, default_value_t = 0.5)]
        shift: f64,
        /// Seed of the transition structure; the sampling seed comes from `--seed`.
        #[arg(long, default_value_t = 7)]
        structure_seed: u64,
    },
    /// Write every report (curves, series, decay, pairwise, forms, charts).
    Report,
    /// Built-in n-gram trainer speaking the external backend protocol.
    #[command(hide = true)]
    NgramBackend {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: PathBuf,
    },
}

/// An upstream artifact a subcommand needs is absent.
#[derive(Debug, Error)]
#[error("{} not found; run `perish {producer}` first", path.display())]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub producer: &'static str,
}

/// Every fit attempted by a subcommand failed.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct AllFitsFailed(pub String);

#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_FIT: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<FitError>()
            || cause.is::<DecayError>()
            || cause.is::<TheoryError>()
            || cause.is::<AllFitsFailed>()
            || matches!(
                cause.downcast_ref::<PipelineError>(),
                Some(PipelineError::Fit(_) | PipelineError::Decay(_))
            )
        {
            return EXIT_FIT;
        }
    }
    EXIT_DATA
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<Config> {
    let mut cfg = match &global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global).map_err(|e| anyhow::Error::new(UsageError(format!("{e:#}"))))?;
    let wd = workdir::Workdir::new(&cli.global.workdir);
    match cli.command {
        Command::Ingest {
            inputs,
            min_score,
            range,
        } => commands::ingest(&wd, &cfg, &inputs, min_score, range.as_deref()),
        Command::Slice { topic } => commands::slice(&wd, &cfg, topic.as_deref()),
        Command::Ladder => commands::ladder(&wd, &cfg),
        Command::Train {
            backend,
            backend_command,
            backend_id,
            topic,
            periods,
            jobs,
            cross_eval,
        } => {
            let mut cfg = cfg;
            if let Some(c) = cross_eval {
                cfg.cross_eval = c.into();
            }
            commands::train(
                &wd,
                &cfg,
                commands::TrainOptions {
                    backend,
                    backend_command,
                    backend_id,
                    topic,
                    periods,
                    jobs,
                },
            )
        }
        Command::Curves => commands::curves(&wd, &cfg),
        Command::Effectiveness {
            reference_period,
            reference_size,
        } => commands::effectiveness(&wd, &cfg, reference_period.as_deref(), reference_size),
        Command::Decay => commands::decay(&wd, &cfg),
        Command::Pairwise => commands::pairwise(&wd, &cfg),
        Command::Forms => commands::forms(&wd, &cfg),
        Command::Offload {
            model,
            mu,
            a,
            b,
            slope,
            n,
            weights,
            bin_width,
        } => commands::offload(&cfg, model, mu, a, b, slope, n, &weights, bin_width),
        Command::Synth {
            out,
            drift,
            periods,
            words_per_period,
            words_per_document,
            topic,
            vocab,
            branching,
            shift,
            structure_seed,
        } => commands::synth(
            &cfg,
            commands::SynthOptions {
                out,
                drift,
                periods,
                words_per_period,
                words_per_document,
                topic,
                vocab,
                branching,
                shift,
                structure_seed,
            },
        ),
        Command::Report => commands::report(&wd, &cfg),
        Command::NgramBackend {
            train,
            dev,
            test,
            out,
            seed,
            config,
        } => commands::ngram_backend(&train, &dev, &test, &out, seed, &config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&UsageError("x".into()).into()), EXIT_USAGE);
        assert_eq!(exit_code(&AllFitsFailed("x".into()).into()), EXIT_FIT);
        assert_eq!(exit_code(&FitError::TooFewPoints(1).into()), EXIT_FIT);
        let missing = MissingArtifact {
            path: "m.jsonl".into(),
            producer: "train",
        };
        assert_eq!(missing.to_string(), "m.jsonl not found; run `perish train` first");
        assert_eq!(exit_code(&missing.into()), EXIT_DATA);
        let wrapped = anyhow::Error::new(UsageError("bad".into())).context("outer");
        assert_eq!(exit_code(&wrapped), EXIT_USAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
