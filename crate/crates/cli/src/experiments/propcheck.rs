use hjreg::action::{
    probe_compact_containment, probe_convexity, probe_semiconcavity, probe_velocity_bounds, ProbeConfig,
};
use hjreg::probe::ProbeReport;
use serde_json::json;

use super::{default_catalog, spec_label};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.propcheck;
    if p.gaps.is_empty() || p.gaps.iter().any(|g| !(*g > 0.0)) {
        return Err(CliError::Config("propcheck.gaps must be positive".into()));
    }
    if !(p.cone > 0.0 && p.radius > 0.0 && p.containment_t > 0.0) {
        return Err(CliError::Config("propcheck cone, radius and containment_t must be positive".into()));
    }
    let specs = if p.catalog.is_empty() { default_catalog() } else { p.catalog.clone() };
    let probe_cfg = ProbeConfig {
        samples: p.samples,
        seed: cfg.seed,
        ..ProbeConfig::default()
    };
    let mut out = Outcome::default();
    let mut summary = Vec::new();
    let pairs: Vec<(f64, f64)> = p.gaps.iter().map(|g| (0.0, *g)).collect();
    for (i, spec) in specs.iter().enumerate() {
        let l = spec.build()?;
        let label = spec_label(spec, i);
        let x = vec![0.0; l.dim()];
        let reports: Vec<ProbeReport> = vec![
            probe_semiconcavity(&l, &x, 0.0, &p.gaps, p.cone, &probe_cfg),
            probe_convexity(&l, &x, 0.0, p.cone, &p.gaps, &probe_cfg),
            probe_velocity_bounds(l.as_ref(), &x, p.radius, &pairs, &probe_cfg),
            probe_compact_containment(l.as_ref(), &x, p.cone, 0.0, p.containment_t, &probe_cfg),
        ];
        for r in &reports {
            art.json(&format!("{label}_{}.json", r.probe), r)?;
            out.push(Check::le(format!("{label}_{}_violations", r.probe), r.violations.len() as f64, 0.0));
            summary.push(json!({
                "lagrangian": l.label(),
                "probe": r.probe,
                "violations": r.violations.len(),
                "constants": r.constants,
            }));
        }
        if spec.is_free_particle() {
            let tol = cfg.tol("free_particle_constant", 1e-6);
            let c = reports[0].constant("C_lambda").unwrap_or(f64::NAN);
            let cppp = reports[1].constant("C_lambda_ppp").unwrap_or(f64::NAN);
            out.push(Check::le(format!("{label}_C_lambda_error"), (c - 1.0).abs(), tol));
            out.push(Check::le(format!("{label}_C_lambda_ppp_error"), (cppp - 1.0).abs(), tol));
            let kt = reports[2].tables.get("kappa_T");
            let worst = kt
                .map(|t| t.rows.iter().map(|r| (r[1] - r[0]).abs()).fold(0.0, f64::max))
                .unwrap_or(f64::NAN);
            out.push(Check::le(format!("{label}_kappa_T_error"), worst, cfg.tol("kappa_t", 1e-6)));
        }
    }
    art.json("report.json", &json!({ "experiment": "propcheck", "probes": summary }))?;
    Ok(out)
}
