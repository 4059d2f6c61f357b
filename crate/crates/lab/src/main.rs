use std::path::PathBuf;
use std::process::ExitCode;

use blowup_core::LabError;
use blowup_lab::acceptance::run_acceptance;
use blowup_lab::{emit_report, read_report, run_experiment, Kind, RunConfig, Status};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blowup-lab", version, about = "Blow-up profile experiments for the log-perturbed wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default out/<kind>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run the acceptance suite instead of a single experiment.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Blow-up ODE oracle and the asymptotics of the similarity profile.
    Profile,
    /// Eigen-pairs, projections and integral regimes on the d-grid.
    Spectral,
    /// Manufactured-solution tracking of the tilted profile.
    Evolve,
    /// Perturbed run near the tilted profile with modulation and energy audits.
    Trap,
    /// Energy constants, E0 monotonicity and the energy trace.
    Energy,
    /// Print the report.json found in --out.
    Report,
}

fn code(status: Status) -> ExitCode {
    ExitCode::from(status.exit_code() as u8)
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    code(Status::ConfigError)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.check {
        let results = run_acceptance(cli.seed.unwrap_or(1));
        for c in &results {
            println!("{}", c.line());
        }
        let ok = results.iter().all(|c| c.pass());
        return code(if ok { Status::Pass } else { Status::ChecksFailed });
    }

    let mut config = match &cli.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return config_error(format!("{}: {e}", path.display())),
            };
            match RunConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            }
        }
        None => RunConfig::default(),
    };

    let kind = match cli.command {
        Some(Command::Report) => {
            let Some(dir) = cli.out.or(config.out) else {
                return config_error("report needs --out <dir>");
            };
            return match read_report(&dir.join("report.json")) {
                Ok(r) => {
                    print!("{}", r.summary());
                    code(r.status)
                }
                Err(e @ LabError::Io(_)) => {
                    eprintln!("{e}");
                    code(Status::NumericError)
                }
                Err(e) => config_error(e),
            };
        }
        Some(Command::Profile) => Kind::Profile,
        Some(Command::Spectral) => Kind::Spectral,
        Some(Command::Evolve) => Kind::Evolve,
        Some(Command::Trap) => Kind::Trap,
        Some(Command::Energy) => Kind::Energy,
        None if cli.config.is_some() => config.kind,
        None => return config_error("give a subcommand, --config or --check"),
    };
    config.kind = kind;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let dir = cli
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));

    let mut report = run_experiment(config);
    if report.status == Status::ConfigError {
        return config_error(report.error.unwrap_or_default());
    }
    if let Err(e) = emit_report(&mut report, &dir) {
        eprintln!("{e}");
        return code(Status::NumericError);
    }
    print!("{}", report.summary());
    println!("wrote {} files to {}", report.artifacts.len(), dir.display());
    code(report.status)
}
