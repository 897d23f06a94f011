//! `webtable`: build tables from the web with a trained team of agents.
//!
//! Exit codes: 0 success, 1 domain failure, 2 configuration error. Failures
//! print `{"error": kind, "message": ...}` on stderr.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{InferArgs, ScoreArgs, SkillsCmd, TrainArgs};
use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "webtable", version, about = "Build wide tables from web sources with a team of agents")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one query with read-only banks.
    Infer {
        #[arg(long)]
        query: String,
        /// Comma-separated output columns.
        #[arg(long)]
        columns: Option<String>,
        #[arg(long)]
        run_dir: PathBuf,
        /// Refuse banks that training has not frozen.
        #[arg(long)]
        require_frozen: bool,
    },
    /// Grow the banks over a JSONL dataset of queries and gold tables.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to one pass over the dataset.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Leave the banks appendable afterwards.
        #[arg(long)]
        no_freeze: bool,
    },
    /// Score a predicted table against gold and print the report as JSON.
    Score {
        #[arg(long, conflicts_with = "run")]
        pred: Option<PathBuf>,
        #[arg(long, conflicts_with = "run")]
        gold: Option<PathBuf>,
        /// Run directory holding output.md and gold.md.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        columns: Option<String>,
    },
    /// Inspect a skill bank.
    Skills {
        /// Bank directory; defaults to the tier under --banks.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Tier::Strategies)]
        tier: Tier,
        #[command(subcommand)]
        action: SkillsAction,
    },
    /// Print the recorded trajectories of a run.
    Replay {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        worker: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Tier {
    Strategies,
    Workers,
}

#[derive(Subcommand)]
enum SkillsAction {
    /// One line per skill: name, kind, version, description.
    List,
    /// Print a skill body verbatim.
    Show {
        name: String,
        #[arg(long)]
        version: Option<u32>,
    },
    /// Print (name, version) pairs present in AFTER but not BEFORE. Each side is a bank directory or a snapshot file.
    Diff { before: PathBuf, after: PathBuf },
    /// Print the bank's (name, version, sha256) snapshot as JSON.
    Snapshot,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Infer { query, columns, run_dir, require_frozen } => {
            let cfg = RunConfig::load(&cli.overrides)?;
            log::info!("infer in {} mode, seed {}", commands::mode_label(&cfg), cfg.seed);
            let table = commands::infer(&cfg, &InferArgs { query, columns, run_dir, require_frozen })?;
            commands::print_table(&table, &mut out)?;
        }
        Command::Train { dataset, episodes, out: out_dir, no_freeze } => {
            let cfg = RunConfig::load(&cli.overrides)?;
            log::info!("train in {} mode, seed {}", commands::mode_label(&cfg), cfg.seed);
            let report = commands::train(&cfg, &TrainArgs { dataset, episodes, out: out_dir, no_freeze })?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serialisable"))?;
        }
        Command::Score { pred, gold, run, columns } => {
            let cfg = scoring_config(&cli.overrides)?;
            let report = commands::score_cmd(&cfg, &ScoreArgs { pred, gold, run, columns })?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serialisable"))?;
        }
        Command::Skills { bank, tier, action } => {
            let bank = match bank {
                Some(b) => b,
                None => {
                    let cfg = scoring_config(&cli.overrides)?;
                    match tier {
                        Tier::Strategies => cfg.strategies_dir(),
                        Tier::Workers => cfg.workers_dir(),
                    }
                }
            };
            let cmd = match action {
                SkillsAction::List => SkillsCmd::List,
                SkillsAction::Show { name, version } => SkillsCmd::Show { name, version },
                SkillsAction::Diff { before, after } => SkillsCmd::Diff { before, after },
                SkillsAction::Snapshot => SkillsCmd::Snapshot,
            };
            commands::skills(&bank, &cmd, &mut out)?;
        }
        Command::Replay { run_dir, worker } => commands::replay(&run_dir, worker.as_deref(), &mut out)?,
    }
    Ok(())
}

/// Commands that never touch the web skip the corpus requirement.
fn scoring_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut o = o.clone();
    o.mode = Some(config::EnvMode::Live);
    RunConfig::load(&o)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
