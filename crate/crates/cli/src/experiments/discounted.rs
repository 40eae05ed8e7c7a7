use std::sync::Arc;

use hjreg::action::ActionKernel;
use hjreg::discounted::{backward_calibrated_curve, solve_discounted};
use hjreg::lagrangian::{discount_lift, Mechanical, PotentialKind, TonelliLagrangian};
use hjreg::laxoleinik::{default_targets, lax_minus, solve_cauchy, LaxOptions};
use serde_json::{json, Value};

use super::solve;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.discounted;
    if !(p.dt > 0.0 && p.tol_fp > 0.0) {
        return Err(CliError::Config("discounted.dt and discounted.tol_fp must be positive".into()));
    }
    let l = cfg.lagrangian.build()?;
    let lambda = cfg.require_lambda()?;
    let grid = cfg.require_grid()?;
    let sol = solve(cfg, &l, p.dt, p.tol_fp)?;
    art.with_writer("u.csv", |w| sol.u.write_csv(w))?;
    let mut out = Outcome::default();
    let mut report = json!({
        "experiment": "discounted",
        "lagrangian": l.label(),
        "solution": sol.metadata_json(),
    });

    let beta = (-lambda * p.dt).exp();
    let contraction_rel = (sol.measured_contraction / beta - 1.0).abs();
    report["contraction"] = json!({ "beta": beta, "measured": sol.measured_contraction, "rel_error": contraction_rel });
    // A run that converges in one sweep has no increment ratio to measure.
    if sol.iterations > 2 {
        out.push(Check::le("contraction_rel", contraction_rel, cfg.tol("contraction_rel", 0.05)));
    }

    if let Some(a) = p.constant_case {
        let flat: Arc<dyn TonelliLagrangian> =
            Arc::new(Mechanical::new(l.dim(), PotentialKind::Flat).with_shift(-a));
        let c = solve_discounted(&flat, lambda, &grid, p.dt, p.tol_fp)?;
        let err = c.u.values().iter().map(|v| (v - a / lambda).abs()).fold(0.0, f64::max);
        report["constant_case"] = json!({ "a": a, "exact": a / lambda, "sup_error": err, "iterations": c.iterations });
        out.push(Check::le("constant_sup", err, cfg.tol("constant_sup", 1e-8)));
    }

    if p.reference_refine > 1 {
        let fine = grid.refined(p.reference_refine);
        let r = solve_discounted(&l, lambda, &fine, p.dt / p.reference_refine as f64, p.tol_fp)?;
        let diff = grid
            .nodes()
            .zip(sol.u.values())
            .map(|(x, v)| (v - r.u.interpolate(&x)).abs())
            .fold(0.0, f64::max);
        art.with_writer("u_reference.csv", |w| r.u.write_csv(w))?;
        report["reference"] = json!({
            "refine": p.reference_refine,
            "nodes": fine.len(),
            "sup_difference": diff,
            "residual": r.residual,
        });
        out.push(Check::le("reference_sup", diff, cfg.tol("reference_sup", 2e-3)));
    }

    if p.lift_t > 0.0 {
        let t = p.lift_t;
        let lifted: Arc<dyn TonelliLagrangian> = Arc::new(discount_lift(l.clone(), lambda, t)?);
        let kernel = ActionKernel::new(lifted);
        let targets = default_targets(&sol.u, &kernel, 0.0, t, None)?;
        let opts = LaxOptions {
            targets: Some(targets.clone()),
            ..LaxOptions::default()
        };
        let evolved = if p.lift_steps <= 1 {
            lax_minus(&sol.u, &kernel, 0.0, t, &opts)?.values
        } else {
            solve_cauchy(&sol.u, &kernel, 0.0, t, p.lift_steps, &opts)?
        };
        let expected = sol.lift(t).resample(&targets);
        let err = evolved.sup_distance(&expected);
        let mut rows = Vec::with_capacity(targets.len());
        for (j, x) in targets.nodes().enumerate() {
            let mut row = x;
            row.push(evolved.values()[j]);
            row.push(expected.values()[j]);
            rows.push(row);
        }
        let mut header: Vec<String> = (1..=targets.dim()).map(|i| format!("x{i}")).collect();
        header.extend(["evolved".into(), "lifted".into()]);
        art.csv("lift.csv", &header, &rows)?;
        report["lift"] = json!({ "t": t, "steps": p.lift_steps.max(1), "targets": targets.len(), "sup_error": err });
        out.push(Check::le("lift_sup", err, cfg.tol("lift_sup", 5e-3)));
    }

    let mut curves = Vec::new();
    let mut worst_defect: f64 = 0.0;
    for (k, x) in p.calibrated_points.iter().enumerate() {
        match backward_calibrated_curve(&sol, &l, x, p.calibrated_horizon, p.calibrated_horizon, p.dt.min(0.01)) {
            Ok(c) => {
                art.with_writer(&format!("curve_{k}.csv"), |w| c.write_csv(w))?;
                worst_defect = worst_defect.max(c.calibration_defect);
                curves.push(json!({ "x": x, "calibration_defect": c.calibration_defect }));
            }
            Err(e) => curves.push(json!({ "x": x, "error": e.to_string() })),
        }
    }
    if !curves.is_empty() {
        report["calibrated_curves"] = Value::Array(curves);
        out.push(Check::le("calibration_defect", worst_defect, cfg.tol("calibration_defect", 1e-2)));
    }
    art.json("report.json", &report)?;
    Ok(out)
}
