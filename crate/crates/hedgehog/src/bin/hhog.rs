//! `hhog` — batch driver for the hedgehog stability toolkit.
//!
//! ```text
//! hhog <command> [--config run.cfg] [--out DIR] [--seed S]
//!                [--a2 LIST] [--b2 X] [--c2 X]
//!                [--n N] [--rmax R] [--imax I] [--qang Q]
//! ```
//!
//! Exit status is 0 iff every contract the command asserts passed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use hedgehog::cli::{resolve_config, run, CliError, Command, ConfigError, Overrides};

#[derive(Parser)]
#[command(
    name = "hhog",
    version,
    about = "Radial hedgehog profile, spectra, and stability certificates",
    after_help = "Commands: profile, verify-ode, modes, scan, critical, witness, \
                  identities, bounds, report"
)]
struct Cli {
    /// Command to run (see list below).
    command: String,

    /// Flat key = value config file with [sections].
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for artifacts (default: ./artifacts).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed for test-function sampling.
    #[arg(long)]
    seed: Option<u64>,

    /// a² value, or comma-separated list for scans.
    #[arg(long)]
    a2: Option<String>,

    #[arg(long)]
    b2: Option<f64>,

    #[arg(long)]
    c2: Option<f64>,

    /// Radial intervals (even).
    #[arg(long)]
    n: Option<usize>,

    /// Domain radius.
    #[arg(long)]
    rmax: Option<f64>,

    /// Largest angular family index.
    #[arg(long)]
    imax: Option<usize>,

    /// Gauss–Legendre order of the θ grid.
    #[arg(long)]
    qang: Option<usize>,
}

fn parse_a2_list(raw: &str) -> Result<Vec<f64>, CliError> {
    let list: Result<Vec<f64>, _> = raw.split(',').map(|t| t.trim().parse::<f64>()).collect();
    list.map_err(|_| {
        CliError::Config(ConfigError::BadValue {
            key: "--a2".into(),
            message: format!("not a number list: `{raw}`"),
        })
    })
}

fn real_main(args: Cli) -> Result<bool, CliError> {
    let command: Command = args.command.parse()?;
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        a2: args.a2.as_deref().map(parse_a2_list).transpose()?,
        b2: args.b2,
        c2: args.c2,
        n: args.n,
        r_max: args.rmax,
        i_max: args.imax,
        q_ang: args.qang,
    };
    let cfg = resolve_config(args.config.as_deref(), &overrides)?;
    let outcome = run(command, &cfg)?;
    for note in &outcome.notes {
        println!("{note}");
    }
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match real_main(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hhog: asserted contracts failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("hhog: {e}");
            ExitCode::FAILURE
        }
    }
}
