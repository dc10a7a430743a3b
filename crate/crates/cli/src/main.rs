//! `nostill`: experiment driver for latent length-scale space-time GPs.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.

mod config;
mod error;
mod report;
mod run;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, StageError};
use crate::run::Run;

#[derive(Parser)]
#[command(name = "nostill", version, about = "Latent length-scale space-time GP experiments")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = "NOSTILL_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read and split the dataset, writing train.csv and test.csv.
    Ingest(RunArgs),
    /// Fit the stationary model and pick latent points.
    Select(RunArgs),
    /// Fit the stationary model, pick or import latent points and train.
    Train(TrainArgs),
    /// Plan with previously trained models and score both.
    Plan(RunArgs),
    /// Every stage from ingestion to the summary.
    Run(RunArgs),
    /// Collect several runs into plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Latent points CSV to use instead of running selection.
    #[arg(long)]
    latents: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories.
    dirs: Vec<PathBuf>,
    /// Directory for the plot data.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Setup(CliError),
    Stage(StageError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Setup(e) => e.exit_code(),
            Failure::Stage(e) => e.error.exit_code(),
        }
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        Failure::Setup(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Setup(e) => write!(f, "{e}"),
            Failure::Stage(e) => write!(f, "{e}"),
        }
    }
}

fn open_run(args: &RunArgs, root: Option<&PathBuf>, command: &str) -> Result<Run, CliError> {
    let (mut config, base) = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate(&base)?;
    let out_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => config.output_dir(&base, root.map(PathBuf::as_path)),
    };
    Ok(Run::new(config, base, out_dir, command))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let root = cli.output_root.as_ref();
    match cli.command {
        Command::Ingest(args) => {
            let mut run = open_run(&args, root, "ingest")?;
            let (train, test) = run.ingest()?;
            run.export_split(&train, &test)?;
            run.finish()?;
        }
        Command::Select(args) => {
            let mut run = open_run(&args, root, "select")?;
            let (train, _) = run.ingest()?;
            let stationary = run.stationary(&train)?;
            run.select(&train, &stationary)?;
            run.finish()?;
        }
        Command::Train(args) => {
            let mut run = open_run(&args.run, root, "train")?;
            let (train, _) = run.ingest()?;
            let stationary = run.stationary(&train)?;
            let latents = match &args.latents {
                Some(path) => run.import_latents(path)?,
                None => run.select(&train, &stationary)?,
            };
            run.train(&train, &stationary, &latents)?;
            run.finish()?;
        }
        Command::Plan(args) => {
            let mut run = open_run(&args, root, "plan")?;
            let (train, test) = run.ingest()?;
            let (stationary, model) = run.load_models(&train)?;
            run.plan(&test, &stationary, &model)?;
            run.finish()?;
        }
        Command::Run(args) => {
            let mut run = open_run(&args, root, "run")?;
            let (train, test) = run.ingest()?;
            let stationary = run.stationary(&train)?;
            let latents = run.select(&train, &stationary)?;
            let model = run.train(&train, &stationary, &latents)?;
            run.plan(&test, &stationary, &model)?;
            let manifest = run.finish()?;
            log::info!(target: "run", "artifacts: {}", manifest.artifacts.join(", "));
        }
        Command::Report(args) => {
            let out = match root {
                Some(r) if args.out.is_relative() => r.join(&args.out),
                _ => args.out.clone(),
            };
            let flagged = report::report(&args.dirs, &out)?;
            log::info!(target: "report", "wrote {} ({flagged} runs flagged)", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "[{}] {}", record.target(), record.args()))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_CONFIG } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!(target: "nostill", "{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
