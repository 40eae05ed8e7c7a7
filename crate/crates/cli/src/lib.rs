//! Config-driven experiment runner for `hjreg`.
//!
//! Every run writes `manifest.json` (config echo, versions, status, checks
//! and artifact list) even when it fails, `timing.json` with the wall time,
//! and experiment-specific `report.json` and CSV files.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{ExperimentConfig, Kind};
pub use error::CliError;
use output::{write_json, Artifacts, Check, Outcome};

/// Exit code for a clean run.
pub const EXIT_OK: i32 = 0;
/// Exit code when a configured assertion fails.
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub library_version: &'static str,
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub config: Option<ExperimentConfig>,
    pub status: &'static str,
    pub exit_code: i32,
    pub error_class: Option<&'static str>,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Timing {
    wall_seconds: f64,
}

/// Result of [`run`]: the exit code and where the artifacts went.
#[derive(Debug)]
pub struct RunSummary {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

fn execute(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    experiments::validate_tols(cfg)?;
    match cfg.kind.expect("kind is resolved by config::load") {
        Kind::Fundamental => experiments::fundamental::run(cfg, art),
        Kind::Operators => experiments::operators::run(cfg, art),
        Kind::Discounted => experiments::discounted::run(cfg, art),
        Kind::Regularize => experiments::regularize::run(cfg, art),
        Kind::Singularity => experiments::singularity::run(cfg, art),
        Kind::Propcheck => experiments::propcheck::run(cfg, art),
        Kind::LambdaSweep => experiments::lambda_sweep::run(cfg, art),
    }
}

/// Runs an already-loaded (or failed-to-load) config and writes the manifest.
pub fn run(kind: Kind, cfg: Result<ExperimentConfig, CliError>, out_dir: &Path) -> RunSummary {
    let start = Instant::now();
    let mut manifest = Manifest {
        tool: "hjreg",
        cli_version: env!("CARGO_PKG_VERSION"),
        library_version: hjreg::VERSION,
        experiment: Some(kind.to_string()),
        seed: None,
        config: None,
        status: "ok",
        exit_code: EXIT_OK,
        error_class: None,
        error: None,
        checks: Vec::new(),
        artifacts: Vec::new(),
    };
    let result = Artifacts::new(out_dir)
        .map_err(CliError::from)
        .and_then(|mut art| {
            let cfg = cfg?;
            manifest.seed = Some(cfg.seed);
            manifest.config = Some(cfg.clone());
            let outcome = execute(&cfg, &mut art);
            manifest.artifacts = art.files();
            outcome
        });
    match result {
        Ok(outcome) => {
            if !outcome.passed() {
                manifest.status = "failed";
                manifest.exit_code = EXIT_VIOLATION;
                manifest.error_class = Some("violation");
                let failed: Vec<&str> = outcome
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                manifest.error = Some(format!("failed checks: {}", failed.join(", ")));
            }
            manifest.checks = outcome.checks;
        }
        Err(e) => {
            manifest.status = "failed";
            manifest.exit_code = e.exit_code();
            manifest.error_class = Some(e.class());
            manifest.error = Some(e.to_string());
        }
    }
    let _ = std::fs::create_dir_all(out_dir);
    if let Err(e) = write_json(&out_dir.join("manifest.json"), &manifest) {
        eprintln!("cannot write manifest: {e}");
        if manifest.exit_code == EXIT_OK {
            manifest.exit_code = 2;
        }
    }
    let _ = write_json(
        &out_dir.join("timing.json"),
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    );
    RunSummary {
        exit_code: manifest.exit_code,
        out_dir: out_dir.to_path_buf(),
        manifest,
    }
}
