//! Sampling probes for the regularity of `A_{s,t}`: velocity and momentum
//! bounds of minimizers, compact containment of minimizer graphs, and
//! two-sided midpoint-defect bounds in `(t, y)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{minimize_action_with, ActionKernel, FundamentalSolution, SolverOptions};
use crate::lagrangian::{LagrangianExt, TonelliLagrangian};
use crate::probe::{ProbeReport, Table};

/// Sample budget, seed and solver settings shared by the probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub samples: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

fn unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

/// Uniform direction with radius drawn uniformly from `[rmin, rmax]`.
fn shell<R: Rng>(rng: &mut R, n: usize, rmin: f64, rmax: f64) -> Vec<f64> {
    let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
    unit(rng, n).into_iter().map(|c| c * r).collect()
}

fn offset(x: &[f64], d: &[f64], sign: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + sign * b).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `(sup |ξ̇|, sup |p|, sup |ξ − x|)` over nodes and segment midpoints.
fn sups(l: &dyn TonelliLagrangian, fs: &FundamentalSolution, x: &[f64]) -> (f64, f64, f64) {
    let c = &fs.minimizer;
    let mut times = c.times.clone();
    times.extend(c.times.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut out = (0.0_f64, 0.0_f64, 0.0_f64);
    for tau in times {
        let q = c.position(tau);
        let v = c.velocity(tau);
        let p = l.grad_v_vec(tau, q.as_slice(), v.as_slice());
        out.0 = out.0.max(v.norm());
        out.1 = out.1.max(p.norm());
        out.2 = out.2.max(norm(&offset(q.as_slice(), x, -1.0)));
    }
    out
}

/// Tabulates `sup|ξ̇|`, `sup|p|` and `sup|ξ − x|` over minimizers from `x` to
/// `y ∈ B̄(x, R)` against `r = R/(t − s)`, and checks that the resulting
/// `κ_T(r)` is nondecreasing in `r`.
pub fn probe_velocity_bounds(
    l: &dyn TonelliLagrangian,
    x: &[f64],
    radius: f64,
    time_pairs: &[(f64, f64)],
    cfg: &ProbeConfig,
) -> ProbeReport {
    let n = l.dim();
    let mut report = ProbeReport::new("velocity_bounds");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_pair = (cfg.samples / time_pairs.len().max(1)).max(2);
    let mut table = Table::new(["r", "gap", "max_speed", "max_momentum", "max_displacement"]);
    let mut lip = 0.0_f64;

    for &(s, t) in time_pairs {
        let gap = t - s;
        let r = radius / gap;
        let mut acc = (0.0_f64, 0.0_f64, 0.0_f64);
        for k in 0..per_pair {
            // Half the samples sit on the sphere, where the bound is tight.
            let d = if k % 2 == 0 {
                shell(&mut rng, n, radius, radius)
            } else {
                shell(&mut rng, n, 0.0, radius)
            };
            let y = offset(x, &d, 1.0);
            report.samples += 1;
            match minimize_action_with(l, s, t, x, &y, &cfg.solver) {
                Ok(fs) => {
                    let (a, b, c) = sups(l, &fs, x);
                    acc = (acc.0.max(a), acc.1.max(b), acc.2.max(c));
                    lip = lip.max(fs.velocity_lipschitz);
                }
                Err(e) => report.check(-1.0, || format!("solver failed at gap {gap}: {e}")),
            }
        }
        table.push(vec![r, gap, acc.0, acc.1, acc.2]);
    }

    table.rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut kappa = Table::new(["r", "kappa_T"]);
    for row in &table.rows {
        let k = row[2].max(row[3]).max(row[4]);
        match kappa.rows.last_mut() {
            Some(last) if last[0] == row[0] => last[1] = last[1].max(k),
            _ => kappa.push(vec![row[0], k]),
        }
    }
    for w in kappa.rows.windows(2) {
        let slack = w[1][1] - w[0][1] + 1e-9 * w[0][1].abs().max(1.0);
        report.check(slack, || {
            format!("kappa_T decreases from {} at r = {} to {} at r = {}", w[0][1], w[0][0], w[1][1], w[1][0])
        });
    }
    for row in &kappa.rows {
        report.set(format!("kappa_T({})", row[0]), row[1]);
    }
    report.set("C1", lip);
    report.tables.insert("sups".into(), table);
    report.tables.insert("kappa_T".into(), kappa);
    report
}

/// Checks that minimizers for `A_{s,t+h}(x, y + z)` with `y ∈ B(x, λT)`,
/// `|z| < λT`, `−T/2 < h < 1 − T` stay in the box of radius `κ(4λ)` around
/// `(x, 0)`, where `κ(4λ)` is the empirical velocity/momentum/displacement
/// bound for endpoint ratio `4λ` over gaps in `[T/2, 1]`.
pub fn probe_compact_containment(
    l: &dyn TonelliLagrangian,
    x: &[f64],
    lambda_cone: f64,
    s: f64,
    t: f64,
    cfg: &ProbeConfig,
) -> ProbeReport {
    let n = l.dim();
    let big_t = t - s;
    let mut report = ProbeReport::new("compact_containment");
    report.check(1.0 - big_t, || format!("T = {big_t} must be below 1"));
    let window = l.time_window();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // κ(4λ) from a sweep over gaps in [T/2, 1].
    let gaps: Vec<f64> = (0..6)
        .map(|j| 0.5 * big_t + j as f64 * (1.0 - 0.5 * big_t) / 5.0)
        .filter(|g| window.contains(s + g))
        .collect();
    let per_gap = (cfg.samples / (2 * gaps.len().max(1))).max(2);
    let mut kappa = 0.0_f64;
    for &g in &gaps {
        let radius = 4.0 * lambda_cone * g;
        for k in 0..per_gap {
            let d = if k % 2 == 0 {
                shell(&mut rng, n, radius, radius)
            } else {
                shell(&mut rng, n, 0.0, radius)
            };
            let y = offset(x, &d, 1.0);
            match minimize_action_with(l, s, s + g, x, &y, &cfg.solver) {
                Ok(fs) => {
                    let (a, b, c) = sups(l, &fs, x);
                    kappa = kappa.max(a).max(b).max(c);
                }
                Err(e) => report.check(-1.0, || format!("kappa sweep failed at gap {g}: {e}")),
            }
        }
    }
    report.set("kappa(4 lambda)", kappa);

    let h_hi = (1.0 - big_t).min(window.end - t);
    let h_lo = -0.5 * big_t;
    let mut worst = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..cfg.samples {
        let y = offset(x, &shell(&mut rng, n, 0.0, 0.999 * lambda_cone * big_t), 1.0);
        let z = shell(&mut rng, n, 0.0, 0.999 * lambda_cone * big_t);
        let h = rng.gen_range(0.999 * h_lo..=0.999 * h_hi.max(h_lo));
        let end = offset(&y, &z, 1.0);
        report.samples += 1;
        match minimize_action_with(l, s, t + h, x, &end, &cfg.solver) {
            Ok(fs) => {
                let (a, b, c) = sups(l, &fs, x);
                worst = (worst.0.max(a), worst.1.max(b), worst.2.max(c));
                let bound = kappa * (1.0 + 1e-9) + 1e-12;
                report.check(bound - a, || format!("speed {a} exceeds kappa {kappa} (h = {h})"));
                report.check(bound - b, || format!("momentum {b} exceeds kappa {kappa} (h = {h})"));
                report.check(bound - c, || format!("displacement {c} exceeds kappa {kappa} (h = {h})"));
                report.check(s + 1.0 - (t + h), || format!("end time {} beyond s + 1", t + h));
            }
            Err(e) => report.check(-1.0, || format!("solver failed (h = {h}): {e}")),
        }
    }
    report.set("max_speed", worst.0);
    report.set("max_momentum", worst.1);
    report.set("max_displacement", worst.2);
    report
}

struct Defects {
    space: Vec<f64>,
    joint: Vec<f64>,
    failures: usize,
}

/// Midpoint defects `T·[A(t+h, y+z) + A(t−h, y−z) − 2A(t, y)]/(h² + |z|²)`
/// in space only (`h = 0`) and jointly, for `h` drawn from `h_range`.
fn defects(
    kernel: &ActionKernel,
    x: &[f64],
    s: f64,
    big_t: f64,
    lambda_cone: f64,
    h_range: (f64, f64),
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Defects {
    let n = kernel.dim();
    let t = s + big_t;
    let mut out = Defects {
        space: Vec::new(),
        joint: Vec::new(),
        failures: 0,
    };
    let r = lambda_cone * big_t;
    for _ in 0..samples {
        let y = offset(x, &shell(rng, n, 0.0, 0.999 * r), 1.0);
        let z = shell(rng, n, 0.1 * r, 0.999 * r);
        let h = rng.gen_range(h_range.0..=h_range.1);
        let yp = offset(&y, &z, 1.0);
        let ym = offset(&y, &z, -1.0);
        let vals = (|| {
            let a0 = kernel.value(s, t, x, &y)?;
            let ap = kernel.value(s, t, x, &yp)?;
            let am = kernel.value(s, t, x, &ym)?;
            let jp = kernel.value(s, t + h, x, &yp)?;
            let jm = kernel.value(s, t - h, x, &ym)?;
            Ok::<_, crate::error::Error>((a0, ap, am, jp, jm))
        })();
        match vals {
            Ok((a0, ap, am, jp, jm)) => {
                let z2 = z.iter().map(|c| c * c).sum::<f64>();
                out.space.push(big_t * (ap + am - 2.0 * a0) / z2);
                out.joint.push(big_t * (jp + jm - 2.0 * a0) / (h * h + z2));
            }
            Err(_) => out.failures += 1,
        }
    }
    out
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Empirical semiconcavity constant `C_λ` of `(t, y) ↦ A_{s,t}(x, y)` for
/// each horizon `T` in `gaps`, and a check that it stays bounded across them.
///
/// The headline `C_lambda` uses spatial perturbations only; the joint
/// constant with time perturbations `|h| < T/2` is reported alongside.
pub fn probe_semiconcavity(
    l: &Arc<dyn TonelliLagrangian>,
    x: &[f64],
    s: f64,
    gaps: &[f64],
    lambda_cone: f64,
    cfg: &ProbeConfig,
) -> ProbeReport {
    let kernel = ActionKernel::new(l.clone()).with_options(cfg.solver.clone());
    let mut report = ProbeReport::new("semiconcavity");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_gap = (cfg.samples / gaps.len().max(1)).max(1);
    let mut table = Table::new(["T", "C_lambda", "C_lambda_joint"]);
    for &big_t in gaps {
        report.check(2.0 / 3.0 - big_t, || format!("T = {big_t} must be below 2/3"));
        let hmax = 0.499 * big_t;
        let d = defects(&kernel, x, s, big_t, lambda_cone, (-hmax, hmax), per_gap, &mut rng);
        report.samples += per_gap;
        if d.failures > 0 {
            report.check(-1.0, || format!("{} solver failures at T = {big_t}", d.failures));
        }
        let c = max_of(&d.space);
        let cj = max_of(&d.joint);
        report.check(if c.is_finite() { 1.0 } else { -1.0 }, || {
            format!("C_lambda not finite at T = {big_t}")
        });
        table.push(vec![big_t, c, cj]);
    }
    let cs = table.column("C_lambda").unwrap_or_default();
    let (lo, hi) = (min_of(&cs), max_of(&cs));
    if lo > 0.0 {
        report.check(10.0 - hi / lo, || {
            format!("C_lambda varies by a factor {} across T", hi / lo)
        });
    }
    report.set("C_lambda", hi);
    report.set(
        "C_lambda_joint",
        max_of(&table.column("C_lambda_joint").unwrap_or_default()),
    );
    report.tables.insert("by_T".into(), table);
    report
}

/// Semiconvexity constant `C''_λ` (joint perturbations with `0 ≤ h < T/2`)
/// and local uniform convexity constant `C'''_λ` in space, over `t_grid`.
///
/// `T''_λ` is the largest `T` in the grid below which every horizon shows
/// `C'''(T) > 0`; `T'_λ` is the largest `T` below which every solve converged.
pub fn probe_convexity(
    l: &Arc<dyn TonelliLagrangian>,
    x: &[f64],
    s: f64,
    lambda_cone: f64,
    t_grid: &[f64],
    cfg: &ProbeConfig,
) -> ProbeReport {
    let kernel = ActionKernel::new(l.clone()).with_options(cfg.solver.clone());
    let mut report = ProbeReport::new("convexity");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_gap = (cfg.samples / t_grid.len().max(1)).max(1);
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut table = Table::new(["T", "C_pp", "C_ppp", "failures"]);
    for &big_t in &grid {
        let d = defects(&kernel, x, s, big_t, lambda_cone, (0.0, 0.499 * big_t), per_gap, &mut rng);
        report.samples += per_gap;
        let cpp = (-min_of(&d.joint)).max(0.0);
        let cppp = min_of(&d.space);
        table.push(vec![big_t, cpp, cppp, d.failures as f64]);
    }

    let mut t_p = f64::NAN;
    let mut t_pp = f64::NAN;
    let mut c_ppp = f64::INFINITY;
    let mut c_pp = 0.0_f64;
    let mut converged = true;
    let mut convex = true;
    for row in &table.rows {
        converged &= row[3] == 0.0;
        if converged {
            t_p = row[0];
            c_pp = c_pp.max(row[1]);
        }
        convex &= converged && row[2] > 0.0;
        if convex {
            t_pp = row[0];
            c_ppp = c_ppp.min(row[2]);
        }
    }
    report.check(if t_pp.is_nan() { -1.0 } else { 1.0 }, || {
        "no horizon in the grid shows uniform convexity".to_string()
    });
    for row in &table.rows {
        if row[3] > 0.0 {
            report.check(-1.0, || format!("{} solver failures at T = {}", row[3], row[0]));
        }
    }
    report.set("C_lambda_pp", c_pp);
    report.set("C_lambda_ppp", c_ppp);
    report.set("T_lambda_p", t_p);
    report.set("T_lambda_pp", t_pp);
    report.tables.insert("by_T".into(), table);
    report
}
