//! One module per subcommand. Each reads its section of the config, writes
//! `report.json` plus CSV artifacts, and returns the checks it evaluated.

pub mod discounted;
pub mod fundamental;
pub mod lambda_sweep;
pub mod operators;
pub mod propcheck;
pub mod regularize;
pub mod singularity;

use std::sync::Arc;

use hjreg::discounted::{solve_discounted, DiscountedSolution};
use hjreg::lagrangian::TonelliLagrangian;

use crate::config::{ExperimentConfig, Kind, LagrangianSpec};
use crate::error::CliError;

/// Acceptance bounds understood by each experiment.
pub fn known_tols(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Fundamental => &["max_rel_error", "gradient_rel_error"],
        Kind::Operators => &["moreau_sup_error", "kappa0_abs_error", "kappa0_scaling_rel"],
        Kind::Discounted => &["constant_sup", "reference_sup", "contraction_rel", "lift_sup", "calibration_defect"],
        Kind::Regularize => &["final_error_factor", "gradient_distance_spacings", "brute_force_gap"],
        Kind::Singularity => &["jump_spacings", "derivative_spacings"],
        Kind::Propcheck => &["free_particle_constant", "kappa_t"],
        Kind::LambdaSweep => &[],
    }
}

pub fn validate_tols(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let kind = cfg.kind.expect("kind is resolved");
    let known = known_tols(kind);
    for k in cfg.tol.keys() {
        if !known.contains(&k.as_str()) {
            return Err(CliError::Config(format!(
                "unknown tolerance `{k}` for `{kind}` (known: {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

/// The catalog used when a config does not list Lagrangians explicitly.
pub fn default_catalog() -> Vec<LagrangianSpec> {
    let mut drift = LagrangianSpec::named("drift", 1);
    drift.drift = Some(vec![0.5]);
    let mut cos = LagrangianSpec::named("mechanical", 1);
    cos.potential = Some(hjreg::lagrangian::PotentialKind::Cos);
    cos.amplitude = Some(0.5);
    let mut aniso = LagrangianSpec::named("anisotropic", 2);
    aniso.diag = Some(vec![1.0, 2.0]);
    aniso.coupling = Some(0.3);
    vec![
        LagrangianSpec::named("free_particle", 1),
        LagrangianSpec::named("free_particle", 2),
        drift,
        cos,
        LagrangianSpec::named("double_well", 1),
        aniso,
    ]
}

/// Short label for file names.
pub fn spec_label(spec: &LagrangianSpec, index: usize) -> String {
    format!("{index:02}_{}_{}d", spec.key, spec.dim)
}

pub(crate) fn solve(
    cfg: &ExperimentConfig,
    l: &Arc<dyn TonelliLagrangian>,
    dt: f64,
    tol_fp: f64,
) -> Result<DiscountedSolution, CliError> {
    let lambda = cfg.require_lambda()?;
    let grid = cfg.require_grid()?;
    if grid.dim() != l.dim() {
        return Err(CliError::Config(format!(
            "grid dimension {} differs from lagrangian dimension {}",
            grid.dim(),
            l.dim()
        )));
    }
    Ok(solve_discounted(l, lambda, &grid, dt, tol_fp)?)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}
