use hjreg::action::ProbeConfig;
use hjreg::lasrylions::trace_singularity;
use serde_json::json;

use super::{dist, solve};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.regularize;
    let l = cfg.lagrangian.build()?;
    let ts = cfg.require_t_grid()?;
    let sol = solve(cfg, &l, p.dt, p.tol_fp)?;
    let h = sol.u.grid().max_spacing();
    let x0 = p.x0.clone().unwrap_or_else(|| vec![0.0; l.dim()]);
    let probe_cfg = ProbeConfig {
        samples: p.probe_samples,
        seed: cfg.seed,
        ..ProbeConfig::default()
    };
    let trace = trace_singularity(&sol, &l, &x0, &ts, &probe_cfg)?;
    let n = x0.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y{i}")));
    header.extend(["singular".into(), "diameter".into(), "unique".into(), "localization_slack".into()]);
    let rows: Vec<Vec<f64>> = (0..trace.t_grid.len())
        .map(|k| {
            let mut row = vec![trace.t_grid[k]];
            row.extend(&trace.maximizers[k]);
            row.push(f64::from(u8::from(trace.singular[k])));
            row.push(trace.diameters[k]);
            row.push(f64::from(u8::from(trace.unique[k])));
            row.push(trace.localization_slack[k]);
            row
        })
        .collect();
    art.csv("trace.csv", &header, &rows)?;

    let in_window: Vec<usize> = (0..trace.t_grid.len()).filter(|&k| trace.t_grid[k] <= trace.t2).collect();
    let all_singular = in_window.iter().all(|&k| trace.singular[k]);
    // Jumps between consecutive grid times inside (0, t₁).
    let continuity: Vec<usize> = (0..trace.t_grid.len()).filter(|&k| trace.t_grid[k] <= trace.t1).collect();
    let max_jump = continuity
        .windows(2)
        .map(|w| dist(&trace.maximizers[w[0]], &trace.maximizers[w[1]]))
        .fold(0.0, f64::max);
    let d_v0 = dist(&trace.right_derivative, &trace.v0);
    let d_q = dist(&trace.right_derivative, &trace.q);
    let slack = trace.localization_slack.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    art.json(
        "report.json",
        &json!({
            "experiment": "singularity",
            "lagrangian": l.label(),
            "solution": sol.metadata_json(),
            "trace": trace,
            "window_points": in_window.len(),
            "max_jump_in_window": max_jump,
            "right_derivative_vs_v0": d_v0,
            "right_derivative_vs_q": d_q,
            "spacing": h,
        }),
    )?;
    let mut out = Outcome::default();
    out.push(Check::ge("window_points", in_window.len() as f64, 1.0));
    out.push(Check::holds("maximizers_singular", all_singular));
    out.push(Check::le("localization_slack", slack, 1e-9));
    let jump_tol = cfg.tol("jump_spacings", 2.0);
    let der_tol = cfg.tol("derivative_spacings", 2.0);
    out.push(Check::le("jump_spacings", max_jump / h, jump_tol));
    out.push(Check::le("derivative_vs_v0_spacings", d_v0 / h, der_tol));
    out.push(Check::le("derivative_vs_q_spacings", d_q / h, der_tol));
    Ok(out)
}
