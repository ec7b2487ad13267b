//! `scgenie` command-line tool.
//!
//! Exit codes: 0 success, 1 malformed input or I/O failure, 2 converter (or
//! candidate) valid but not functional, 3 oracle failed to converge or hit a
//! singular system, 4 oracle discrepancy above tolerance.

mod commands;
mod config;
mod diag;
mod evolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diag::CliError;

#[derive(Parser)]
#[command(name = "scgenie", version, about = "Analyze and evolve switched-capacitor converter topologies")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single worker thread and ordered reductions everywhere.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct VocabArgs {
    #[arg(long, default_value_t = 64)]
    pub max_switches: u32,
    #[arg(long, default_value_t = 16)]
    pub max_caps: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a converter document and write JSON and CSV reports.
    Analyze {
        converter: PathBuf,
        /// One target ratio per mode, or a single ratio for every mode.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        /// Normalization bounds JSON; the shipped table when omitted.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Directory for `<stem>.report.json` and `<stem>.report.csv`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the validation cascade over a sequence JSONL file.
    Validate {
        sequences: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Existing history.bin to judge uniqueness against.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Cross-check the analytic engine against the charge simulator.
    OracleCheck {
        converter: PathBuf,
        /// JSON overrides for capacitances, resistances, f_sw, duty, ...
        #[arg(long)]
        config: Option<PathBuf>,
        /// Perturbs the analytic results by this rational (harness self-test).
        #[arg(long, hide = true)]
        inject_error: Option<String>,
    },
    /// Run (or resume) an evolutionary search into a run directory.
    Evolve {
        /// Run configuration JSON; defaults when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        /// Master seed; falls back to the config file, then SCGENIE_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        generations: Option<usize>,
        /// Sequence JSONL whose circuits count as already seen.
        #[arg(long)]
        preload_history: Option<PathBuf>,
        /// Stop with exit 130 once this generation is on disk.
        #[arg(long, hide = true)]
        halt_after: Option<usize>,
    },
    /// FoM summary of a population file or run directory.
    Stats {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = commands::Format::Json)]
        format: commands::Format,
    },
    /// Write a converter's pin graph as DOT and its traversals as JSONL.
    Export {
        converter: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<PathBuf>,
        /// Number of seeded traversals to write.
        #[arg(short, long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        circuit_id: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        vocab: VocabArgs,
    },
}

pub(crate) fn init_threads(threads: Option<usize>, deterministic: bool) -> Result<(), CliError> {
    let n = if deterministic { 1 } else { threads.unwrap_or(0) };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if !matches!(cli.command, Command::Evolve { .. }) {
        init_threads(cli.threads, cli.deterministic)?;
    }
    match cli.command {
        Command::Analyze { converter, targets, bounds, out_dir } => {
            commands::analyze(&converter, &targets, bounds.as_deref(), &out_dir)
        }
        Command::Validate { sequences, targets, bounds, history, vocab } => {
            commands::validate(&sequences, &targets, bounds.as_deref(), history.as_deref(), &vocab)
        }
        Command::OracleCheck { converter, config, inject_error } => {
            commands::oracle_check(&converter, config.as_deref(), inject_error.as_deref())
        }
        Command::Evolve { config, out, resume, seed, generations, preload_history, halt_after } => evolve::run(evolve::Request {
            config,
            halt_after,
            out,
            resume,
            seed,
            generations,
            preload_history,
            threads: cli.threads,
            deterministic: cli.deterministic,
        }),
        Command::Stats { path, format } => commands::stats(&path, format),
        Command::Export { converter, dot, sequences, n, circuit_id, seed, vocab } => {
            commands::export(&converter, dot.as_deref(), sequences.as_deref(), n, circuit_id, seed, &vocab)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            diag::emit("error", e.code, &e.message);
            ExitCode::from(e.exit)
        }
    }
}
