use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "onebit", version, about = "One-bit compressive sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample signals, measure them through a Gaussian bank and write a dataset file
    GenData(Common),
    /// Train a reconstruction network on a dataset file
    Train(Common),
    /// Evaluate a reconstruction method on a dataset file with ground truth
    Eval(Common),
    /// Run BIHT, optionally grid-searched, on a dataset file
    Biht(Common),
    /// Evaluate the sample-complexity and cell-count bounds
    Bounds(Common),
    /// Cell diameters, identification error and consistent pairs for a bank
    Geometry(Common),
    /// Count the cells of a bank's tessellation met by a signal set
    CellCount(Common),
    /// Run a seeded experiment grid and write CSV and manifest
    Experiment(Common),
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON configuration file
    pub config: PathBuf,
    /// Overrides the seed in the configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (file or, for `experiment`, directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for experiment cells
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<onebit::Error>() {
            return match e {
                onebit::Error::Numerical(_) => 3,
                e if e.is_config() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Train(c) => commands::train(&c),
        Command::Eval(c) => commands::eval(&c),
        Command::Biht(c) => commands::biht(&c),
        Command::Bounds(c) => commands::bounds(&c),
        Command::Geometry(c) => commands::geometry(&c),
        Command::CellCount(c) => commands::cell_count(&c),
        Command::Experiment(c) => commands::experiment(&c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
