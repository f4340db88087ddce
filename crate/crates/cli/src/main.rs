//! `critflow`: training, evaluation and sweeps for critical-flow rerouting.

mod commands;
mod error;
mod experiment;
mod options;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;
use experiment::Experiment;
use options::{load_config, Options};

#[derive(Parser, Debug)]
#[command(name = "critflow", version, about = "Critical-flow selection and rerouting experiments")]
struct Cli {
    /// Flat `key = value` file; every option can be set there.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: Options,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train a selection policy; writes policy.ckpt, train_log.csv and experiences.csv.
    Train,
    /// Evaluate selection methods; writes results.csv, cdf.csv and summary.csv.
    Eval,
    /// Mean pr_u for a list of K fractions, with the ECMP row at K = 0.
    SweepK,
    /// Train and evaluate one policy per hyper-parameter cell.
    SweepHyper,
    /// Generate synthetic traffic matrices into traffic.tm.
    GenerateTm,
    /// Print a topology summary and its links as CSV.
    InspectTopology,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(load_config).transpose()?;
    let exp = Experiment::new(cli.opts, file);
    match cli.command {
        Command::Train => commands::train(&exp),
        Command::Eval => commands::eval(&exp),
        Command::SweepK => commands::sweep_k(&exp),
        Command::SweepHyper => commands::sweep_hyper(&exp),
        Command::GenerateTm => commands::generate_tm(&exp),
        Command::InspectTopology => commands::inspect_topology(&exp),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
