//! `mixflow` command-line driver.
//!
//! Exit codes: 0 success, 2 config, 3 I/O, 4 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixflow_core::error::ExperimentError;
use mixflow_core::experiment::{
    cmd_eval, cmd_sweep, cmd_train, cmd_validate, CommandOutput, ExperimentConfig, ValidationSummary, OUT_ROOT_VAR,
};

#[derive(Parser)]
#[command(name = "mixflow", version, about = "Mixed human/robot intersection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a shared robot policy; writes policy.json, curve.csv and the resolved config.
    Train(RunArgs),
    /// Evaluate the configured controller; writes report.csv.
    Eval(RunArgs),
    /// Evaluate every rate of the sweep list plus both baselines; writes sweep.csv.
    Sweep(RunArgs),
    /// Check a config file, or a report CSV against the report schema.
    Validate { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (default: $MIXFLOW_OUT/<out_dir>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation episodes per controller.
    #[arg(long)]
    runs: Option<usize>,
    /// Run everything on one thread.
    #[arg(long)]
    sequential: bool,
}

type Cmd = fn(&ExperimentConfig, &Path) -> Result<CommandOutput, ExperimentError>;

fn run(args: &RunArgs, cmd: Cmd) -> Result<(), ExperimentError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if args.sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    let out = cfg.output_dir(args.out.as_deref());
    let done = cmd(&cfg, &out)?;
    for f in &done.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run(a, cmd_train),
        Command::Eval(a) => run(a, cmd_eval),
        Command::Sweep(a) => run(a, cmd_sweep),
        Command::Validate { path } => cmd_validate(path).map(|s| match s {
            ValidationSummary::Config {
                observation_dim,
                movements,
                total_inflow,
            } => println!("ok: {movements} movements, observation size {observation_dim}, inflow {total_inflow} veh/h"),
            ValidationSummary::Report { rows, groups } => println!("ok: {rows} rows in {groups} groups"),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixflow: {e}");
            if matches!(e, ExperimentError::Io { .. }) && std::env::var_os(OUT_ROOT_VAR).is_none() {
                eprintln!("hint: set {OUT_ROOT_VAR} to choose the output root");
            }
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
