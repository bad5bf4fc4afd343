//! `shpgr`: scenario-driven front end for the shpgr-core experiments.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::Experiment;
use run::RunError;

#[derive(Parser)]
#[command(name = "shpgr", version, about = "Run a configured experiment and write CSV and plot data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed` in the scenario.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a classical trajectory.
    Geodesic(RunArgs),
    /// Transport a covector along a constant-(t, r, θ) circle.
    Transport(RunArgs),
    /// Holonomy of a closed circle and cut detection.
    Holonomy(RunArgs),
    /// Residual tables for the induced spin algebra.
    SpinVerify(RunArgs),
    /// Little-group element for given N and Λ.
    Induce(RunArgs),
    /// Cayley evolution on a (t, x) lattice.
    Evolve(RunArgs),
    /// EPR correlations and CHSH value.
    Epr(RunArgs),
    /// Spin-ensemble chart from geodesic fans.
    Cover(RunArgs),
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::Geodesic(a) => (Experiment::Geodesic, a),
            Command::Transport(a) => (Experiment::Transport, a),
            Command::Holonomy(a) => (Experiment::Holonomy, a),
            Command::SpinVerify(a) => (Experiment::SpinVerify, a),
            Command::Induce(a) => (Experiment::Induce, a),
            Command::Evolve(a) => (Experiment::Evolve, a),
            Command::Epr(a) => (Experiment::Epr, a),
            Command::Cover(a) => (Experiment::Cover, a),
        }
    }
}

const EXIT_TOLERANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let (experiment, args) = Cli::parse().command.split();
    let start = Instant::now();
    let (cfg, text) = match config::load(&args.config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(e) = cfg.validate(experiment) {
        eprintln!("config error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let report = match run::run(&cfg, seed) {
        Ok(r) => r,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(RunError::Failed(e)) => {
            eprintln!("run failed: {e}");
            return ExitCode::from(EXIT_TOLERANCE);
        }
    };
    let dir = args.out.or(cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));
    if let Err(e) = output::emit(&dir, &text, &report) {
        eprintln!("could not write {}: {e}", dir.display());
        return ExitCode::from(EXIT_TOLERANCE);
    }
    for c in &report.checks {
        println!("{} {}: residual {:.3e}, tolerance {:.3e}", if c.pass() { "PASS" } else { "FAIL" }, c.name, c.residual, c.tolerance);
    }
    for (name, v) in &report.values {
        println!("     {name} = {v:.10e}");
    }
    println!("wrote {} (seed {seed}, wall time {:.3} s)", dir.display(), start.elapsed().as_secs_f64());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_TOLERANCE)
    }
}
