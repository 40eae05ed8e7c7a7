use hjreg::action::ActionKernel;
use hjreg::grid::GridFunction;
use hjreg::laxoleinik::{default_targets, estimate_kappa0, lax_minus, lax_plus, LaxOptions, LaxOutput};
use serde_json::json;

use super::dist;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

/// `sup_y −a|y| − |x − y|²/(2τ)`.
fn moreau(a: f64, tau: f64, x: &[f64]) -> f64 {
    let r = super::norm(x);
    if r <= a * tau {
        -r * r / (2.0 * tau)
    } else {
        -a * r + a * a * tau / 2.0
    }
}

/// Largest `|y − x| − κ₀·t` over every maximizer of an operator output.
fn localization_slack(out: &LaxOutput, t: f64) -> f64 {
    out.records
        .iter()
        .flat_map(|r| r.maximizers.iter().map(move |y| dist(y, &r.x) - r.kappa0 * t))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.operators;
    let l = cfg.lagrangian.build()?;
    let grid = cfg.require_grid()?;
    if grid.dim() != l.dim() {
        return Err(CliError::Config("grid and lagrangian dimensions differ".into()));
    }
    if p.taus.is_empty() || p.taus.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Config("operators.taus must be positive".into()));
    }
    let f = p.initial.eval()?;
    let u = GridFunction::from_fn(grid.clone(), f);
    let kernel = ActionKernel::new(l.clone());
    let mut out = Outcome::default();
    match p.operator.as_str() {
        "lax_plus" | "lax_minus" => {
            if p.moreau_oracle && (!cfg.lagrangian.is_free_particle() || p.initial.kind != "neg_abs" || p.operator != "lax_plus") {
                return Err(CliError::Config(
                    "the Moreau oracle applies to lax_plus of neg_abs with the free particle".into(),
                ));
            }
            let mut per_tau = Vec::new();
            let mut worst_err: f64 = 0.0;
            let mut worst_slack = f64::NEG_INFINITY;
            for (k, &tau) in p.taus.iter().enumerate() {
                let opts = LaxOptions {
                    targets: Some(default_targets(&u, &kernel, 0.0, tau, None)?),
                    ..LaxOptions::default()
                };
                let res = if p.operator == "lax_plus" {
                    lax_plus(&u, &kernel, 0.0, tau, &opts)?
                } else {
                    lax_minus(&u, &kernel, 0.0, tau, &opts)?
                };
                let slack = localization_slack(&res, tau);
                worst_slack = worst_slack.max(slack);
                let g = res.values.grid().clone();
                let n = g.dim();
                let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
                header.push("value".into());
                let mut err: f64 = 0.0;
                if p.moreau_oracle {
                    header.push("oracle".into());
                }
                let mut rows = Vec::with_capacity(g.len());
                for (j, x) in g.nodes().enumerate() {
                    let v = res.values.values()[j];
                    let mut row = x.clone();
                    row.push(v);
                    if p.moreau_oracle {
                        let o = moreau(p.initial.scale, tau, &x);
                        err = err.max((v - o).abs());
                        row.push(o);
                    }
                    rows.push(row);
                }
                art.csv(&format!("field_{k}.csv"), &header, &rows)?;
                worst_err = worst_err.max(err);
                per_tau.push(json!({
                    "tau": tau,
                    "targets": g.len(),
                    "kappa0": res.kappa0,
                    "localization_slack": slack,
                    "unique_fraction": res.records.iter().filter(|r| r.unique).count() as f64 / res.records.len().max(1) as f64,
                    "sup_error": if p.moreau_oracle { Some(err) } else { None },
                }));
            }
            art.json(
                "report.json",
                &json!({
                    "experiment": "operators",
                    "operator": p.operator,
                    "lagrangian": l.label(),
                    "by_tau": per_tau,
                    "max_sup_error": if p.moreau_oracle { Some(worst_err) } else { None },
                }),
            )?;
            out.push(Check::le("localization_slack", worst_slack, 1e-9));
            if p.moreau_oracle {
                out.push(Check::le("moreau_sup_error", worst_err, cfg.tol("moreau_sup_error", 1e-4)));
            }
        }
        "kappa0" => {
            let mut ts = p.taus.clone();
            ts.sort_by(|a, b| b.total_cmp(a));
            let points = if p.sample_points.is_empty() {
                let lo = &grid.lower;
                let hi = &grid.upper;
                (0..=10)
                    .map(|k| {
                        let s = -0.25 + 0.05 * k as f64;
                        lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b) + s * (b - a)).collect()
                    })
                    .collect()
            } else {
                p.sample_points.clone()
            };
            let report = estimate_kappa0(&u, &kernel, 0.0, &ts, &points, &p.scales);
            art.table("kappa0.csv", &report.tables["by_t"])?;
            art.json("report.json", &report)?;
            out.push(Check::holds("no_violations", report.passed()));
            let a0 = p.scales.first().copied().unwrap_or(1.0);
            let k0 = report.constant(&format!("kappa0(alpha={a0})")).unwrap_or(f64::NAN);
            let expected = report.constant(&format!("lip(alpha={a0})")).unwrap_or(f64::NAN);
            if cfg.lagrangian.is_free_particle() {
                out.push(Check::le(
                    "kappa0_abs_error",
                    (k0 - expected).abs(),
                    cfg.tol("kappa0_abs_error", 0.05),
                ));
            }
            if p.scales.len() >= 2 {
                let ratio = report.constant("scaling_ratio").unwrap_or(f64::NAN);
                out.push(Check::le(
                    "kappa0_scaling_rel",
                    (ratio - 1.0).abs(),
                    cfg.tol("kappa0_scaling_rel", 0.1),
                ));
            }
        }
        other => return Err(CliError::Config(format!("unknown operators.operator `{other}`"))),
    }
    Ok(out)
}
