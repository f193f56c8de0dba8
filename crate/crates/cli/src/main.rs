use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gmfusion::episode::{emit_outputs, run_episode};
use gmfusion::scenario::{load_scenario_with_warnings, Mode, ScenarioError};
use gmfusion::FusionError;

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_FUSION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gmfusion",
    version,
    about = "Decentralized Gaussian-mixture sensor fusion scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Homogeneous,
    Heterogeneous,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write weights.csv, mixture.json, particles.csv and report.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Consensus stopping tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Particles drawn per reported mixture (0 disables particles.csv).
        #[arg(long)]
        emit_particles: Option<usize>,
        #[arg(long, value_enum)]
        mode_override: Option<ModeArg>,
    },
}

fn fusion_exit(e: &FusionError) -> u8 {
    match e {
        FusionError::InvalidArgument(_) => EXIT_INVALID,
        _ => EXIT_FUSION,
    }
}

fn main() -> ExitCode {
    let Command::Run {
        scenario,
        out,
        seed,
        tol,
        max_iters,
        emit_particles,
        mode_override,
    } = Cli::parse().command;

    let (mut s, warnings) = match load_scenario_with_warnings(&scenario) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                ScenarioError::Io { .. } => EXIT_IO,
                _ => EXIT_INVALID,
            });
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(tol) = tol {
        s.consensus.tol = tol;
    }
    if let Some(n) = max_iters {
        s.consensus.max_iters = n;
    }
    if let Some(n) = emit_particles {
        s.emit_particles = n;
    }
    if let Some(m) = mode_override {
        s.mode = match m {
            ModeArg::Homogeneous => Mode::Homogeneous,
            ModeArg::Heterogeneous => Mode::Heterogeneous,
        };
    }
    if let Err(e) = s.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INVALID);
    }

    let report = match run_episode(&s) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(fusion_exit(&e));
        }
    };
    for w in &report.warnings {
        if !warnings.contains(w) {
            eprintln!("warning: {w}");
        }
    }

    match emit_outputs(&report, &out) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}
