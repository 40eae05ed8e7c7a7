use std::sync::Arc;

use hjreg::action::{minimize_action_with, SolverOptions};
use hjreg::lagrangian::{discount_lift, TonelliLagrangian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{default_catalog, norm};
use crate::config::{ExperimentConfig, FundamentalParams};
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

fn point(rng: &mut ChaCha8Rng, n: usize, w: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-w..=w)).collect()
}

fn solver(p: &FundamentalParams) -> SolverOptions {
    SolverOptions {
        n_segments: p.n_segments,
        tol: p.solver_tol,
        ..SolverOptions::default()
    }
}

fn validate(p: &FundamentalParams) -> Result<(), CliError> {
    if p.samples == 0 {
        return Err(CliError::Config("fundamental.samples must be positive".into()));
    }
    if !(p.gap[0] > 0.0 && p.gap[1] >= p.gap[0]) {
        return Err(CliError::Config("fundamental.gap must satisfy 0 < min <= max".into()));
    }
    if !(p.half_width > 0.0 && p.fd_step > 0.0 && p.solver_tol > 0.0) {
        return Err(CliError::Config("fundamental widths and tolerances must be positive".into()));
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.fundamental;
    validate(p)?;
    match p.mode.as_str() {
        "oracle" => oracle(cfg, art),
        "gradients" => gradients(cfg, art),
        other => Err(CliError::Config(format!("unknown fundamental.mode `{other}`"))),
    }
}

/// Free-particle action against `|y − x|²/(2(t − s))`, or against
/// `λ|y − x|²/(2(e^{−λs} − e^{−λt}))` for the discounted lift.
fn oracle(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.fundamental;
    if !cfg.lagrangian.is_free_particle() {
        return Err(CliError::Config("the oracle mode needs lagrangian.key = \"free_particle\"".into()));
    }
    let base = cfg.lagrangian.build()?;
    let n = base.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opts = solver(p);
    let lambdas: Vec<Option<f64>> = if p.lambdas.is_empty() {
        vec![None]
    } else {
        p.lambdas.iter().map(|l| Some(*l)).collect()
    };
    let mut header = vec!["lambda".to_string(), "s".into(), "t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("y{i}")));
    header.extend(["value".into(), "oracle".into(), "rel_error".into()]);
    let mut rows = Vec::new();
    let mut per_lambda = Vec::new();
    let mut worst_all: f64 = 0.0;
    for lam in lambdas {
        let l: Arc<dyn TonelliLagrangian> = match lam {
            Some(lam) if lam > 0.0 => Arc::new(discount_lift(base.clone(), lam, p.gap[1])?),
            Some(lam) => return Err(CliError::Config(format!("discount rates must be positive, got {lam}"))),
            None => base.clone(),
        };
        let mut worst: f64 = 0.0;
        for _ in 0..p.samples {
            let x = point(&mut rng, n, p.half_width);
            let y = point(&mut rng, n, p.half_width);
            let gap = rng.gen_range(p.gap[0]..=p.gap[1]);
            let s = if lam.is_some() { 0.0 } else { rng.gen_range(-0.5..=0.5) };
            let t = s + gap;
            let d2 = super::dist(&x, &y).powi(2);
            let exact = match lam {
                Some(lam) => lam * d2 / (2.0 * ((-lam * s).exp() - (-lam * t).exp())),
                None => d2 / (2.0 * gap),
            };
            let fs = minimize_action_with(l.as_ref(), s, t, &x, &y, &opts)?;
            let rel = if exact != 0.0 {
                (fs.value - exact).abs() / exact.abs()
            } else {
                fs.value.abs()
            };
            worst = worst.max(rel);
            let mut row = vec![lam.unwrap_or(0.0), s, t];
            row.extend(&x);
            row.extend(&y);
            row.extend([fs.value, exact, rel]);
            rows.push(row);
        }
        worst_all = worst_all.max(worst);
        per_lambda.push(json!({ "lambda": lam, "max_rel_error": worst }));
    }
    art.csv("errors.csv", &header, &rows)?;
    art.json(
        "report.json",
        &json!({
            "experiment": "fundamental",
            "mode": "oracle",
            "lagrangian": base.label(),
            "samples": rows.len(),
            "max_rel_error": worst_all,
            "by_lambda": per_lambda,
        }),
    )?;
    let mut out = Outcome::default();
    out.push(Check::le("max_rel_error", worst_all, cfg.tol("max_rel_error", 1e-6)));
    Ok(out)
}

/// Endpoint gradients `D_x A`, `D_y A` against central differences of the
/// value over converged instances spread across the catalog.
fn gradients(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.fundamental;
    let specs = if p.catalog.is_empty() { default_catalog() } else { p.catalog.clone() };
    let ls = specs.iter().map(|s| s.build()).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opts = solver(p);
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    let mut worst: f64 = 0.0;
    let mut attempts = 0usize;
    let mut k = 0usize;
    while rows.len() < p.samples && attempts < 5 * p.samples {
        attempts += 1;
        let idx = k % ls.len();
        k += 1;
        let l = &ls[idx];
        let n = l.dim();
        let x = point(&mut rng, n, p.half_width);
        let y = point(&mut rng, n, p.half_width);
        let s = rng.gen_range(-0.5..=0.5);
        let t = s + rng.gen_range(p.gap[0]..=p.gap[1]);
        let Ok(fs) = minimize_action_with(l.as_ref(), s, t, &x, &y, &opts) else {
            skipped += 1;
            continue;
        };
        let value = |xx: &[f64], yy: &[f64]| minimize_action_with(l.as_ref(), s, t, xx, yy, &opts).map(|f| f.value);
        let mut fd_x = vec![0.0; n];
        let mut fd_y = vec![0.0; n];
        let mut ok = true;
        for i in 0..n {
            let h = p.fd_step;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            match (value(&xp, &y), value(&xm, &y), value(&x, &yp), value(&x, &ym)) {
                (Ok(a), Ok(b), Ok(c), Ok(d)) => {
                    fd_x[i] = (a - b) / (2.0 * h);
                    fd_y[i] = (c - d) / (2.0 * h);
                }
                _ => ok = false,
            }
        }
        if !ok {
            skipped += 1;
            continue;
        }
        let gx = fs.grad_x.as_slice();
        let gy = fs.grad_y.as_slice();
        let ex = super::dist(gx, &fd_x) / norm(gx).max(1e-3);
        let ey = super::dist(gy, &fd_y) / norm(gy).max(1e-3);
        worst = worst.max(ex).max(ey);
        rows.push(vec![idx as f64, s, t, fs.value, norm(gx), norm(gy), ex, ey]);
    }
    art.csv(
        "gradients.csv",
        &["lagrangian", "s", "t", "value", "grad_x_norm", "grad_y_norm", "rel_error_x", "rel_error_y"],
        &rows,
    )?;
    let labels: Vec<String> = ls.iter().map(|l| l.label()).collect();
    art.json(
        "report.json",
        &json!({
            "experiment": "fundamental",
            "mode": "gradients",
            "catalog": labels,
            "instances": rows.len(),
            "skipped": skipped,
            "max_rel_error": worst,
        }),
    )?;
    let mut out = Outcome::default();
    out.push(Check::ge("converged_instances", rows.len() as f64, p.samples as f64));
    out.push(Check::le("gradient_rel_error", worst, cfg.tol("gradient_rel_error", 1e-3)));
    Ok(out)
}
