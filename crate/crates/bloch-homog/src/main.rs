//! Command-line front end. Exit codes: 0 all checks pass, 2 a check
//! failed, 3 configuration error (nothing written), 4 solver
//! non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use bloch_homog::config::{Mode, RunConfig};
use bloch_homog::report::emit_report;
use bloch_homog::runner;

/// Effective-tensor workbench for periodic media: cell problems, spectral
/// verification, bound chains, and convergence experiments.
#[derive(Parser)]
#[command(name = "bloch-homog", version, disable_help_subcommand = true)]
struct Cli {
    /// Pipeline: tensors, bloch-verify, bounds, transform-check,
    /// converge-1d, variational, or all.
    mode: String,
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid resolution override.
    #[arg(long)]
    resolution: Option<usize>,
    /// Solver tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    ExitCode::from(real_main())
}

fn real_main() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return code;
        }
    };
    runner::init_threads();

    let mode = match Mode::from_arg(&cli.mode) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    };
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code() as u8;
        }
    };
    cfg.mode = Some(mode);
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(n) = cli.resolution {
        cfg.resolution = n;
    }
    if let Some(t) = cli.tol {
        cfg.solver.tol = t;
    }
    if let Err(e) = cfg.validate(mode) {
        eprintln!("{e}");
        return e.exit_code() as u8;
    }

    let report = match runner::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code() as u8;
        }
    };
    let written = match emit_report(&report, &cfg.out) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code() as u8;
        }
    };

    for check in report.checks() {
        println!(
            "[{}] {}  value {:.6e}  {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.bounds_label()
        );
    }
    for path in &written {
        eprintln!("[artifact] {}", path.display());
    }
    let checks = report.checks();
    let failed = checks.iter().filter(|c| !c.pass).count();
    if report.pass {
        println!("RESULT PASS ({} checks)", checks.len());
        0
    } else {
        println!("RESULT FAIL ({failed} of {} checks)", checks.len());
        2
    }
}
