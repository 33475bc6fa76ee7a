//! `rddi-eit`: linewidth tables, EIT spectra, coupled-dipole runs and a quick
//! oracle battery, all driven by one TOML config.

// `!(x > 0.0)` is deliberate throughout: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{CliError, Report};
use config::{Format, RunConfig};
use output::Output;

#[derive(Parser)]
#[command(
    name = "rddi-eit",
    version,
    about = "EIT spectra of cold-atom clouds with dipole-dipole interactions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[arg(long, global = true, value_enum)]
    plots: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Cooperative linewidth against optical depth for each density and radius.
    Linewidth,
    /// Transmission spectra, FWHM table, power-law fits and order convergence.
    Spectrum,
    /// Discrete coupled-dipole propagation compared with the local-field result.
    CoupledDipole,
    /// Quick numerical oracles.
    OracleCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Linewidth => "linewidth",
            Command::Spectrum => "spectrum",
            Command::CoupledDipole => "coupled-dipole",
            Command::OracleCheck => "oracle-check",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    if let Some(p) = cli.plots {
        cfg.output.plots = matches!(p, Switch::On);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Report, CliError> {
    let cfg = resolve(cli)?;
    let mut out = Output::new(&cfg)?;
    let report = match cli.command {
        Command::Linewidth => commands::linewidth(&cfg, &mut out),
        Command::Spectrum => commands::spectrum(&cfg, &mut out),
        Command::CoupledDipole => commands::coupled_dipole(&cfg, &mut out),
        Command::OracleCheck => commands::oracle_check(&cfg, &mut out),
    }?;
    out.write_manifest(&cfg, cli.command.name(), report.summary.clone())?;
    log::info!("wrote {}", out.dir.display());
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(r) if r.ok => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("numerical failure: one or more oracle checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
