//! `svi`: run experiment grids, compute reference solutions, audit constants.
//!
//! Exit codes: 0 success, 1 invalid input (bad config, failed audit),
//! 2 runtime failure. `SVI_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svi_core::bench::experiment::{compute_references, validate_config};
use svi_core::bench::{run_experiment, write_report, ExperimentConfig};
use svi_core::SviError;

#[derive(Parser)]
#[command(
    name = "svi",
    version,
    about = "Stochastic approximation for stochastic variational inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scheme, setting) cell and write trajectories.csv and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the reference points and write them as JSON.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit the declared constants of every setting without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<SviError> for Failure {
    fn from(e: SviError) -> Self {
        match e {
            SviError::Config(_) | SviError::InvalidParameter(_) | SviError::InvalidSet(_) => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SVI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Invalid(format!("SVI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Result<(), Failure> {
    threads()?;
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_experiment(&cfg)?;
            for c in &report.cells {
                let (lo, hi) = c.final_ci();
                println!(
                    "{:<14} {:<4} initial {:.4e}  final {:.4e}  [{lo:.4e}, {hi:.4e}]  {:.2}s",
                    c.scheme.to_string(),
                    c.setting,
                    c.initial_mse(),
                    c.final_mse(),
                    c.wall_secs.iter().sum::<f64>()
                );
            }
            let (csv, json) = write_report(&report, &dir)?;
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Reference { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let refs = compute_references(&cfg)?;
            for r in &refs {
                println!(
                    "{} {:?}: residual {:.3e} after {} iterations",
                    r.setting, r.smoothing, r.residual, r.iterations
                );
            }
            write_json(&out, &refs)?;
            println!("wrote {}", out.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let audits = validate_config(&cfg)?;
            let mut bad = 0;
            for a in &audits {
                if a.passed() {
                    println!("{}: ok (eta {:.4e}, L {:.4e})", a.setting, a.eta, a.lip);
                } else {
                    bad += 1;
                    for f in &a.failures {
                        println!("{}: {f}", a.setting);
                    }
                }
            }
            if bad > 0 {
                return Err(Failure::Invalid(format!(
                    "{bad} of {} settings failed the audit",
                    audits.len()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
