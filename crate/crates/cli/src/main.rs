//! `freqstrat`: file-driven runs of the frequency, symmetry, stratification and
//! solver experiments.
//!
//! Every run writes its artifacts, a `config.toml` with all defaults filled in
//! and a `manifest.json` into the output directory. Exit status is 0 on success,
//! 1 for invalid configuration or failed preconditions, 2 for runtime failures.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use artifacts::Run;
use commands::*;
use config::{merge, resolve_seed, CliResult, ConfigFile};

#[derive(Parser)]
#[command(name = "freqstrat", version, about = "Frequency and stratification experiments")]
struct Cli {
    /// TOML config; one table per subcommand plus top-level `out` and `seed`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `out/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; `FREQSTRAT_SEED` takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frequency profile over a geometric radius grid.
    FreqScan(FreqScan),
    /// Profile plus the `e^{Cr}`-monotonicity report.
    Monotonicity(FreqScan),
    /// Doubling inequality between two radii.
    Doubling(Doubling),
    /// Nonsymmetry of blow-ups across radii.
    SymmetryScan(SymmetryScan),
    /// Effective critical set `C_r(u)` on a lattice.
    Linearity(Linearity),
    /// Frequency-decomposition cover of a quantitative stratum.
    StratifyCover(StratifyCover),
    /// Tube volumes and Minkowski slope of a point set or of `C_r(u)`.
    TubeVolume(TubeVolume),
    /// Certified critical points of a planar polynomial.
    CriticalCount(CriticalCount),
    /// Dirichlet solve, optionally with a convergence study.
    Solve(Solve),
    /// Least `C` making `e^{Cr}F̄` nondecreasing over a set of fields.
    Calibrate(Calibrate),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::FreqScan(_) => "freq-scan",
            Command::Monotonicity(_) => "monotonicity",
            Command::Doubling(_) => "doubling",
            Command::SymmetryScan(_) => "symmetry-scan",
            Command::Linearity(_) => "linearity",
            Command::StratifyCover(_) => "stratify-cover",
            Command::TubeVolume(_) => "tube-volume",
            Command::CriticalCount(_) => "critical-count",
            Command::Solve(_) => "solve",
            Command::Calibrate(_) => "calibrate",
        }
    }
}

fn execute<P: Serialize + DeserializeOwned>(
    name: &'static str,
    defaults: P,
    flags: &P,
    cli: &Cli,
    file: &ConfigFile,
    body: fn(&P, &mut Run) -> CliResult<serde_json::Value>,
) -> CliResult<()> {
    let params = merge(&defaults, file.section(name), flags)?;
    let seed = resolve_seed(cli.seed, file.seed)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(name));
    let mut run = Run::new(dir, name, seed)?;
    let summary = body(&params, &mut run)?;
    run.finish(&params, summary)
}

fn run(cli: &Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let name = cli.command.name();
    match &cli.command {
        Command::FreqScan(p) => execute(name, FreqScan::defaults(), p, cli, &file, freq_scan),
        Command::Monotonicity(p) => execute(name, FreqScan::defaults(), p, cli, &file, monotonicity),
        Command::Doubling(p) => execute(name, Doubling::defaults(), p, cli, &file, doubling),
        Command::SymmetryScan(p) => execute(name, SymmetryScan::defaults(), p, cli, &file, symmetry_scan),
        Command::Linearity(p) => execute(name, Linearity::defaults(), p, cli, &file, linearity),
        Command::StratifyCover(p) => execute(name, StratifyCover::defaults(), p, cli, &file, stratify_cover),
        Command::TubeVolume(p) => execute(name, TubeVolume::defaults(), p, cli, &file, tube_volume),
        Command::CriticalCount(p) => execute(name, CriticalCount::defaults(), p, cli, &file, critical_count),
        Command::Solve(p) => execute(name, Solve::defaults(), p, cli, &file, solve),
        Command::Calibrate(p) => execute(name, Calibrate::defaults(), p, cli, &file, calibrate),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
