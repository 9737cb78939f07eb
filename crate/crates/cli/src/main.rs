use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chb_cli::config::{parse_config, ExperimentKind, RunConfig};
use chb_cli::run::{run, with_threads, EXIT_ABORT, EXIT_CONFIG};
use clap::{Parser, Subcommand};

/// Spectral Galerkin simulator for the stochastic Cahn-Hilliard-Brinkman
/// system with dynamic boundary conditions.
///
/// Environment: CHB_OUTPUT_DIR overrides the output directory,
/// CHB_THREADS the worker count.
/// Exit codes: 0 pass, 1 certificate failure, 2 config error, 3 numerical abort.
#[derive(Debug, Parser)]
#[command(name = "chb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a config, listing every violation.
    Validate { config: PathBuf },
    /// Run the experiment named in the config.
    Run { config: PathBuf },
    /// Run a certificate suite: yosida, korn, energy, moments, inequality.
    Certify { suite: String, config: PathBuf },
    /// Run a refinement ladder: dt, n, delta.
    Ladder { axis: String, config: PathBuf },
}

fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("CHB_THREADS") {
        Ok(s) => match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("CHB_THREADS must be a positive integer (got '{s}')")),
        },
        Err(_) => Ok(None),
    }
}

fn execute(mut cfg: RunConfig, kind: Option<ExperimentKind>) -> ExitCode {
    if let Some(k) = kind {
        cfg.experiment.kind = k;
    }
    if let Ok(dir) = std::env::var("CHB_OUTPUT_DIR") {
        cfg.output.directory = dir;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let threads = match threads() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let dir = PathBuf::from(&cfg.output.directory);
    let summary = match with_threads(threads, || run(&cfg, &dir)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_ABORT as u8);
        }
    };
    for suite in &summary.suites {
        for c in &suite.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let rel = match c.relation {
                chb_cli::suites::Relation::AtMost => "<=",
                chb_cli::suites::Relation::AtLeast => ">=",
            };
            println!("{tag} {} {:e} {rel} {:e}", c.name, c.value, c.limit);
        }
    }
    if let Some(reason) = &summary.aborted {
        println!("ABORT {reason}");
    }
    println!(
        "{} {} config {} -> {}",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.experiment,
        &summary.config_hash[..12],
        dir.display()
    );
    eprintln!("elapsed {:.3} s", summary.elapsed.as_secs_f64());
    ExitCode::from(summary.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (path, kind) = match &cli.command {
        Command::Validate { config } => {
            return match load(config) {
                Ok(cfg) => {
                    println!("ok {} ({})", config.display(), cfg.experiment.kind);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_CONFIG as u8)
                }
            };
        }
        Command::Run { config } => (config, None),
        Command::Certify { suite, config } => match ExperimentKind::certify(suite) {
            Some(k) => (config, Some(k)),
            None => {
                eprintln!("unknown suite '{suite}' (yosida, korn, energy, moments, inequality)");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        Command::Ladder { axis, config } => match ExperimentKind::ladder(axis) {
            Some(k) => (config, Some(k)),
            None => {
                eprintln!("unknown ladder axis '{axis}' (dt, n, delta)");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
    };
    match load(path) {
        Ok(cfg) => execute(cfg, kind),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
