use hjreg::lagrangian::hamiltonian_of;
use hjreg::lasrylions::{convergence_sweep, gradient_limit_vs_qx, sweep_targets, RegularizeOptions};
use hjreg::regularity::{classify_node, singular_set};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::solve;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Artifacts, Check, Outcome};

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &cfg.regularize;
    let l = cfg.lagrangian.build()?;
    let ts = cfg.require_t_grid()?;
    let sol = solve(cfg, &l, p.dt, p.tol_fp)?;
    let u = &sol.u;
    let grid = u.grid();
    let h = grid.max_spacing();
    let n = grid.dim();
    let t_max = ts.iter().copied().fold(0.0, f64::max);
    let targets = sweep_targets(&sol, &l, t_max)?;

    // Probes: explicit, or singular nodes plus seeded random smooth nodes,
    // all inside the common target box.
    let probes: Vec<Vec<f64>> = if !p.probes.is_empty() {
        p.probes.clone()
    } else {
        let inside = |x: &[f64]| {
            x.iter()
                .enumerate()
                .all(|(a, c)| *c >= targets.lower[a] + 3.0 * h && *c <= targets.upper[a] - 3.0 * h)
        };
        let singular = singular_set(u, 4.0 * h);
        let sing_nodes: Vec<Vec<f64>> = singular.iter().map(|&k| grid.node(k)).filter(|x| inside(x)).collect();
        let near_singular = |x: &[f64]| sing_nodes.iter().any(|s| super::dist(s, x) <= 6.0 * h);
        let mut smooth: Vec<usize> = (0..grid.len())
            .filter(|&k| {
                let x = grid.node(k);
                inside(&x) && !near_singular(&x) && classify_node(u, k).is_some_and(|c| c.differentiable)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        smooth.shuffle(&mut rng);
        smooth.truncate(p.smooth_probes);
        smooth.sort_unstable();
        // One node per cluster of adjacent singular nodes: the one nearest its mean.
        let mut clusters: Vec<Vec<Vec<f64>>> = Vec::new();
        for x in &sing_nodes {
            match clusters.iter_mut().find(|c| c.iter().any(|y| super::dist(x, y) <= 1.5 * h)) {
                Some(c) => c.push(x.clone()),
                None => clusters.push(vec![x.clone()]),
            }
        }
        let reps: Vec<Vec<f64>> = clusters
            .iter()
            .map(|c| {
                let mean: Vec<f64> = (0..n)
                    .map(|a| c.iter().map(|x| x[a]).sum::<f64>() / c.len() as f64)
                    .collect();
                grid.node(grid.nearest(&mean))
            })
            .collect();
        reps.into_iter().chain(smooth.into_iter().map(|k| grid.node(k))).collect()
    };

    let opts = RegularizeOptions {
        targets: Some(targets.clone()),
        ..RegularizeOptions::default()
    };
    let sweep = convergence_sweep(&sol, &l, &ts, &probes, &opts)?;
    art.table("errors.csv", &sweep.error_table())?;
    let mut header = vec!["t".to_string(), "probe".into()];
    header.extend((1..=n).map(|i| format!("g{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    let mut rows = Vec::new();
    for (k, t) in sweep.t_grid.iter().enumerate() {
        for j in 0..probes.len() {
            let mut row = vec![*t, j as f64];
            row.extend(&sweep.gradients[k][j]);
            row.extend(&sweep.velocities[k][j]);
            rows.push(row);
        }
    }
    art.csv("gradients.csv", &header, &rows)?;
    for (k, f) in sweep.fields.iter().enumerate() {
        art.with_writer(&format!("field_{k}.csv"), |w| f.write_csv(w))?;
    }

    let ham = hamiltonian_of(&l);
    let comparisons = probes
        .iter()
        .map(|x| gradient_limit_vs_qx(&sweep, u, ham.as_ref(), x))
        .collect::<Result<Vec<_>, _>>()?;
    let max_distance = comparisons.iter().map(|c| c.distance).fold(0.0, f64::max);
    let max_bf = comparisons.iter().map(|c| c.brute_force_gap).fold(0.0, f64::max);
    let last = *sweep.errors.last().expect("non-empty t grid");
    art.json(
        "report.json",
        &json!({
            "experiment": "regularize",
            "lagrangian": l.label(),
            "solution": sol.metadata_json(),
            "targets": targets.len(),
            "sweep": sweep,
            "comparisons": comparisons,
            "max_gradient_distance": max_distance,
            "max_brute_force_gap": max_bf,
            "spacing": h,
        }),
    )?;

    let mut out = Outcome::default();
    out.push(Check::holds("errors_monotone", sweep.monotone));
    out.push(Check::le(
        "final_error_factor",
        last / sweep.interpolation_error,
        cfg.tol("final_error_factor", 4.0),
    ));
    out.push(Check::le(
        "gradient_distance_spacings",
        max_distance / h,
        cfg.tol("gradient_distance_spacings", 3.0),
    ));
    out.push(Check::le("brute_force_gap", max_bf, cfg.tol("brute_force_gap", 1e-6)));
    Ok(out)
}
