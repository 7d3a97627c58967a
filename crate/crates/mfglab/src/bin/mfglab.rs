//! Command line driver: one subcommand per experiment kind plus the
//! determinism replay. Exit status is nonzero when a pass criterion fails.

use clap::{Parser, Subcommand};
use mfglab::experiment::{replay, run, ExperimentConfig, ExperimentKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mfglab",
    about = "Mean field game laboratory: equilibrium solvers, hypothesis audits, turnpike and ergodic studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for traces, report, manifest and plots
    #[arg(long)]
    out: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Emit SVG plots from the traces
    #[arg(long)]
    plots: bool,
    /// Hypothesis ids to audit (verify runs), e.g. H2 H5 H8p; overrides the
    /// config's list when given
    #[arg(long = "hypothesis")]
    hypotheses: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Audit model hypotheses (regularity, monotonicity, confinement)
    Verify(RunArgs),
    /// Solve one equilibrium and persist it
    Solve(RunArgs),
    /// Decay rates between two equilibria
    Turnpike(RunArgs),
    /// Ergodic constant and normalized value across horizons
    Ergodic(RunArgs),
    /// Compare the limits of two studies with different final costs
    Uniqueness(RunArgs),
    /// Recompute reports from stored traces and compare byte-stably
    Replay {
        /// Output directory of a previous run
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    // Bounded work pool, sized by MFGLAB_WORKERS when set.
    if let Ok(n) = std::env::var("MFGLAB_WORKERS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Verify(args) => run_kind(args, ExperimentKind::Verify),
        Command::Solve(args) => run_kind(args, ExperimentKind::Solve),
        Command::Turnpike(args) => run_kind(args, ExperimentKind::TurnpikePair),
        Command::Ergodic(args) => run_kind(args, ExperimentKind::ErgodicStudy),
        Command::Uniqueness(args) => run_kind(args, ExperimentKind::Uniqueness),
        Command::Replay { dir } => match replay(&dir) {
            Ok(mfglab::experiment::ReplayOutcome::Match) => {
                println!("replay: reports match byte-for-byte");
                ExitCode::SUCCESS
            }
            Ok(mfglab::experiment::ReplayOutcome::Mismatch { diff }) => {
                eprintln!("replay: MISMATCH — {diff}");
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("replay failed: {e}");
                ExitCode::from(2)
            }
        },
    }
}

fn run_kind(args: RunArgs, kind: ExperimentKind) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {:?}: {e}", args.config);
            return ExitCode::from(2);
        }
    };
    // Apply CLI overrides by rewriting the parsed config back to TOML so
    // the stored copy matches what actually ran.
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config invalid: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.kind != kind {
        eprintln!(
            "config kind `{}` does not match the `{}` subcommand",
            cfg.kind, kind
        );
        return ExitCode::from(2);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.hypotheses.is_empty() {
        cfg.experiment.hypotheses = args.hypotheses.clone();
    }
    let effective = match toml::to_string_pretty(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config serialization failed: {e}");
            return ExitCode::from(2);
        }
    };
    let base_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    match run(&effective, &base_dir, &args.out, args.plots) {
        Ok(report) => {
            for item in &report.items {
                let flag = match item.pass {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "info",
                };
                match item.bound {
                    Some(b) => println!("[{flag}] {} = {:.6e} (bound {:.6e})", item.name, item.value, b),
                    None => println!("[{flag}] {} = {:.6e}", item.name, item.value),
                }
            }
            if report.pass {
                println!("all criteria in scope passed");
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more criteria failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(2)
        }
    }
}
