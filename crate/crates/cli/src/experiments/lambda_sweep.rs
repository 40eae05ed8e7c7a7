use hjreg::lasrylions::lambda_sweep_problem_probe;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Outcome};

/// Exploratory: tabulates `q^λ_x` without pass/fail checks.
pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.lambda_sweep;
    if p.lambdas.is_empty() || p.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Config("lambda_sweep.lambdas must be positive".into()));
    }
    if !(p.dt > 0.0) {
        return Err(CliError::Config("lambda_sweep.dt must be positive".into()));
    }
    let l = cfg.lagrangian.build()?;
    let grid = cfg.require_grid()?;
    let mut lambdas = p.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let report = lambda_sweep_problem_probe(&l, &lambdas, &p.points, &grid, p.dt, p.reference.as_deref());
    art.table("q_by_lambda.csv", &report.tables["q_by_lambda"])?;
    art.json("report.json", &json!({ "experiment": "lambda-sweep", "lagrangian": l.label(), "probe": report }))?;
    Ok(Outcome::default())
}
