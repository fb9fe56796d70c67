use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use radial_bump::app::{exit, run, Command, Invocation};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Validate,
    Solve,
    Verify,
    Sweep,
    Probe,
}

/// Radial graphs over spherical domains with prescribed mean curvature.
#[derive(Debug, Parser)]
#[command(name = "radial-bump", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report path (overrides outputs.report_path; stdout when neither is set).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep parameter: grid_spacing, theta0, theta0_deg, epsilon, c, gamma, r1, r2, extent.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long)]
    values: Option<String>,
    /// Number of probe starts (overrides probe.n_starts).
    #[arg(long)]
    starts: Option<usize>,
    /// Probe seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Stored solution for verify (overrides outputs.solution_path).
    #[arg(long)]
    solution: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("RADIAL_BUMP_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("radial-bump: RADIAL_BUMP_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(exit::USAGE as u8);
            }
        }
    }
    let command = match cli.command {
        Cmd::Validate => Command::Validate,
        Cmd::Solve => Command::Solve,
        Cmd::Verify => Command::Verify,
        Cmd::Sweep => Command::Sweep,
        Cmd::Probe => Command::Probe,
    };
    let code = run(&Invocation {
        command,
        config: cli.config,
        out: cli.out,
        param: cli.param,
        values: cli.values,
        starts: cli.starts,
        seed: cli.seed,
        solution: cli.solution,
    });
    ExitCode::from(code as u8)
}
