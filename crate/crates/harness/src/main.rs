use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

use polyflow_harness::commands::{self, CommandError, ExitCode, SampleOptions};

#[derive(Parser)]
#[command(name = "polyflow", version, about = "Flow-matching time-series prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); the built-in default toy problem when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the check suite and write report.json / report.csv.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check ids; replaces the config's selector list.
        #[arg(long)]
        only: Option<String>,
        /// Record wall time per check (makes the report non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Write the seeded dataset.
    Data {
        #[command(flatten)]
        common: Common,
    },
    /// Write the basis and the projection-error table.
    Basis {
        #[command(flatten)]
        common: Common,
    },
    /// Run the sampler on one series.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Dataset series index (0-based).
        #[arg(long, default_value_t = 0)]
        series: usize,
        /// Zero vector field with noise off, so x1 = x0.
        #[arg(long)]
        zero_field: bool,
    },
    /// Train the transformer field.
    TrainDit {
        #[command(flatten)]
        common: Common,
    },
    /// Write the convergence table.
    Converge {
        #[command(flatten)]
        common: Common,
    },
    /// Write the risk grid and the two-term fit.
    Generalize {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CommandError> {
    let load = |c: &Common| commands::load_config(c.config.as_deref(), c.seed);
    match cli.command {
        Command::Verify { common, only, timings } => {
            let mut cfg = load(&common)?;
            if let Some(list) = only {
                cfg.experiments = commands::parse_selectors(&list)?;
                cfg.validate()?;
            }
            let (code, report) = commands::verify(&cfg, &common.out, timings)?;
            for c in &report.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                match &c.error {
                    Some(e) => println!("{status} {} ({e})", c.check_id),
                    None => println!("{status} {}", c.check_id),
                }
            }
            Ok(code)
        }
        Command::Data { common } => commands::data(&load(&common)?, &common.out),
        Command::Basis { common } => commands::basis(&load(&common)?, &common.out),
        Command::Sample {
            common,
            series,
            zero_field,
        } => commands::sample(&load(&common)?, &common.out, SampleOptions { series, zero_field }),
        Command::TrainDit { common } => commands::train_dit(&load(&common)?, &common.out),
        Command::Converge { common } => commands::converge(&load(&common)?, &common.out),
        Command::Generalize { common } => commands::generalize(&load(&common)?, &common.out),
    }
}

fn main() {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    process::exit(code as i32);
}
