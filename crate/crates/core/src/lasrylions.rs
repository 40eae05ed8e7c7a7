//! Intrinsic Lasry-Lions regularization `T̂_t u^λ(x) = sup_y u^λ(y) − A^λ_{0,t}(x, y)`
//! of a discounted solution, the limit of its gradients as `t → 0⁺`, and the
//! propagation of singularities along the maximizers `y_{t,x₀}`.

use std::sync::Arc;

use serde::Serialize;

use crate::action::{probe_convexity, ActionKernel, ProbeConfig};
use crate::discounted::{solve_discounted, DiscountedSolution};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::lagrangian::{discount_lift, hamiltonian_of, Hamiltonian, Point, TonelliLagrangian};
use crate::laxoleinik::{default_targets, lax_plus, lax_plus_at, LaxOptions, MaximizerRecord};
use crate::probe::{ProbeReport, Table};
use crate::regularity::{
    default_cluster_tol, default_radius, is_singular, min_h_over_superdiff, semiconcavity_constant_masked,
    singular_set, superdifferential, QMinimum, Region, SuperdiffSet,
};

/// Singularity membership threshold, in spacings.
pub const SINGULAR_DIAMETER_FACTOR: f64 = 4.0;

/// Lifted Lagrangian `L^λ = e^{λt}L` with its action kernel.
#[derive(Clone, Debug)]
pub struct LiftedKernel {
    pub lambda: f64,
    pub horizon: f64,
    pub kernel: ActionKernel,
}

impl LiftedKernel {
    /// The lift is certified on `[0, horizon]`.
    pub fn new(l: &Arc<dyn TonelliLagrangian>, lambda: f64, horizon: f64) -> Result<Self> {
        let lifted: Arc<dyn TonelliLagrangian> = Arc::new(discount_lift(l.clone(), lambda, horizon)?);
        Ok(Self {
            lambda,
            horizon,
            kernel: ActionKernel::new(lifted),
        })
    }
}

/// Options shared by the regularization routines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegularizeOptions {
    /// Evaluation nodes; defaults to the nodes whose localization ball fits
    /// the box at the largest `t` requested.
    pub targets: Option<Grid>,
    pub lax: LaxOptions,
}

/// `T̂_t u^λ` on the target grid with its gradient data.
#[derive(Clone, Debug)]
pub struct Regularized {
    pub t: f64,
    pub field: GridFunction,
    /// Gradient at each target node where the maximizer is unique.
    pub gradients: Vec<Option<Point>>,
    pub probe_gradients: Vec<Point>,
    pub probe_records: Vec<MaximizerRecord>,
    /// Largest difference quotient of the gradient field between neighbouring nodes.
    pub gradient_lipschitz: f64,
    pub kappa0: f64,
}

fn gradient_lipschitz(grid: &Grid, gradients: &[Option<Point>]) -> f64 {
    let n = grid.dim();
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let Some(gk) = &gradients[k] else { continue };
        let idx: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
        for a in 0..n {
            let mut j = idx.clone();
            j[a] += 1;
            if let Some(m) = grid.resolve(&j) {
                if let Some(gm) = &gradients[m] {
                    worst = worst.max((gm - gk).norm() / grid.spacing(a));
                }
            }
        }
    }
    worst
}

fn regularize_with(
    u: &GridFunction,
    lifted: &LiftedKernel,
    t: f64,
    targets: &Grid,
    probe_points: &[Vec<f64>],
    lax: &LaxOptions,
) -> Result<Regularized> {
    let opts = LaxOptions {
        targets: Some(targets.clone()),
        ..lax.clone()
    };
    let out = lax_plus(u, &lifted.kernel, 0.0, t, &opts)?;
    let mut probe_gradients = Vec::with_capacity(probe_points.len());
    let mut probe_records = Vec::with_capacity(probe_points.len());
    for x in probe_points {
        let pv = lax_plus_at(u, &lifted.kernel, 0.0, t, x, lax)?;
        match pv.gradient {
            Some(g) => probe_gradients.push(g),
            None => return Err(Error::NonUniqueMaximizer { x: x.clone(), t }),
        }
        probe_records.push(pv.record);
    }
    Ok(Regularized {
        t,
        gradient_lipschitz: gradient_lipschitz(out.values.grid(), &out.gradients),
        field: out.values,
        gradients: out.gradients,
        probe_gradients,
        probe_records,
        kappa0: out.kappa0,
    })
}

fn lifted_for(sol: &DiscountedSolution, l: &Arc<dyn TonelliLagrangian>, t_max: f64) -> Result<LiftedKernel> {
    LiftedKernel::new(l, sol.lambda, 2.0 * t_max)
}

fn targets_for(sol: &DiscountedSolution, lifted: &LiftedKernel, t_max: f64, opts: &RegularizeOptions) -> Result<Grid> {
    match &opts.targets {
        Some(g) => Ok(g.clone()),
        None => default_targets(&sol.u, &lifted.kernel, 0.0, t_max, opts.lax.kappa0),
    }
}

/// Targets used by [`convergence_sweep`] when none are given: the nodes
/// whose localization ball at `t_max` stays inside the box.
pub fn sweep_targets(sol: &DiscountedSolution, l: &Arc<dyn TonelliLagrangian>, t_max: f64) -> Result<Grid> {
    let lifted = lifted_for(sol, l, t_max)?;
    targets_for(sol, &lifted, t_max, &RegularizeOptions::default())
}

/// `T̂_t u^λ` through `lax_plus` with the lifted kernel on `[0, t]`.
///
/// Fails with `NonUniqueMaximizer` when condition (M) fails at a probe point.
pub fn intrinsic_regularize(
    sol: &DiscountedSolution,
    l: &Arc<dyn TonelliLagrangian>,
    t: f64,
    probe_points: &[Vec<f64>],
    opts: &RegularizeOptions,
) -> Result<Regularized> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let lifted = lifted_for(sol, l, t)?;
    let targets = targets_for(sol, &lifted, t, opts)?;
    regularize_with(&sol.u, &lifted, t, &targets, probe_points, &opts.lax)
}

/// Aitken Δ² extrapolants of a scalar sequence; falls back to the last term
/// when the second difference vanishes.
pub fn aitken(seq: &[f64]) -> Vec<f64> {
    seq.windows(3)
        .map(|w| {
            let d1 = w[2] - w[1];
            let d2 = w[2] - 2.0 * w[1] + w[0];
            if d2.abs() <= 1e-14 * (w[2].abs() + 1.0) || !(d1 * d1 / d2).is_finite() {
                w[2]
            } else {
                w[2] - d1 * d1 / d2
            }
        })
        .collect()
}

/// Componentwise Aitken extrapolants of a vector sequence.
fn aitken_vec(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if seq.len() < 3 {
        return Vec::new();
    }
    let n = seq[0].len();
    let per: Vec<Vec<f64>> = (0..n)
        .map(|a| aitken(&seq.iter().map(|v| v[a]).collect::<Vec<_>>()))
        .collect();
    (0..per[0].len()).map(|k| (0..n).map(|a| per[a][k]).collect()).collect()
}

/// Limit estimate of a vector sequence along a geometric grid: the last
/// Aitken extrapolant, and whether the last three extrapolants agree to `tol`.
/// With fewer than five terms, the last Richardson step `2g_k − g_{k−1}`.
pub fn extrapolate(seq: &[Vec<f64>], tol: f64) -> (Vec<f64>, bool) {
    let ext = aitken_vec(seq);
    if ext.len() >= 3 {
        let last = &ext[ext.len() - 3..];
        let agree = last
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| (a - b).abs() <= tol));
        (ext[ext.len() - 1].clone(), agree)
    } else if seq.len() >= 2 {
        let (a, b) = (&seq[seq.len() - 2], &seq[seq.len() - 1]);
        (b.iter().zip(a).map(|(x, y)| 2.0 * x - y).collect(), false)
    } else {
        (seq.last().cloned().unwrap_or_default(), false)
    }
}

/// Largest `|cubic − linear|` midpoint discrepancy over the cells of `u`,
/// along each axis: an estimate of the multilinear interpolation error.
pub fn interpolation_error(u: &GridFunction) -> f64 {
    let grid = u.grid();
    let n = grid.dim();
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let idx: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
        for a in 0..n {
            let at = |d: i64| {
                let mut j = idx.clone();
                j[a] += d;
                grid.resolve(&j).map(|m| u.values()[m])
            };
            if let (Some(um), Some(u0), Some(u1), Some(u2)) = (at(-1), at(0), at(1), at(2)) {
                worst = worst.max((-um + u0 + u1 - u2).abs() / 16.0);
            }
        }
    }
    worst
}

/// Errors and gradient sequences of `T̂_t u^λ` along a decreasing `t_grid`.
#[derive(Clone, Debug, Serialize)]
pub struct RegularizationSweep {
    pub lambda: f64,
    pub t_grid: Vec<f64>,
    /// `‖T̂_t u^λ − u^λ‖_∞` over the common targets.
    pub errors: Vec<f64>,
    /// Whether `errors` is nonincreasing along the grid.
    pub monotone: bool,
    pub interpolation_error: f64,
    pub probe_points: Vec<Vec<f64>>,
    /// `[t][probe]` gradients `D T̂_t u^λ(x)`.
    pub gradients: Vec<Vec<Vec<f64>>>,
    /// `[t][probe]` average velocities `(y_{t,x} − x)/t`.
    pub velocities: Vec<Vec<Vec<f64>>>,
    pub gradient_limits: Vec<Vec<f64>>,
    pub velocity_limits: Vec<Vec<f64>>,
    /// Whether the last three Aitken extrapolants of the gradient agree to 1e-3.
    pub cauchy: Vec<bool>,
    pub gradient_lipschitz: Vec<f64>,
    pub kappa0: Vec<f64>,
    #[serde(skip)]
    pub fields: Vec<GridFunction>,
    #[serde(skip)]
    pub targets: Option<Grid>,
}

impl RegularizationSweep {
    pub fn probe_index(&self, x: &[f64]) -> Option<usize> {
        self.probe_points
            .iter()
            .position(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())))
    }

    /// `t, error` table.
    pub fn error_table(&self) -> Table {
        let mut t = Table::new(["t", "error", "gradient_lipschitz", "kappa0"]);
        for k in 0..self.t_grid.len() {
            t.push(vec![self.t_grid[k], self.errors[k], self.gradient_lipschitz[k], self.kappa0[k]]);
        }
        t
    }
}

/// Runs [`intrinsic_regularize`] over `t_grid` (sorted decreasing) on one
/// set of targets sized for the largest `t`.
pub fn convergence_sweep(
    sol: &DiscountedSolution,
    l: &Arc<dyn TonelliLagrangian>,
    t_grid: &[f64],
    probe_points: &[Vec<f64>],
    opts: &RegularizeOptions,
) -> Result<RegularizationSweep> {
    let mut ts = t_grid.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    let t_max = *ts.first().ok_or_else(|| Error::InvalidInput("empty t grid".into()))?;
    if !(ts.last().copied().unwrap_or(0.0) > 0.0) {
        return Err(Error::InvalidInput("t grid must be positive".into()));
    }
    let lifted = lifted_for(sol, l, t_max)?;
    let targets = targets_for(sol, &lifted, t_max, opts)?;
    let base = sol.u.resample(&targets);
    let mut sweep = RegularizationSweep {
        lambda: sol.lambda,
        t_grid: ts.clone(),
        errors: Vec::new(),
        monotone: true,
        interpolation_error: interpolation_error(&sol.u),
        probe_points: probe_points.to_vec(),
        gradients: Vec::new(),
        velocities: Vec::new(),
        gradient_limits: Vec::new(),
        velocity_limits: Vec::new(),
        cauchy: Vec::new(),
        gradient_lipschitz: Vec::new(),
        kappa0: Vec::new(),
        fields: Vec::new(),
        targets: Some(targets.clone()),
    };
    for &t in &ts {
        let r = regularize_with(&sol.u, &lifted, t, &targets, probe_points, &opts.lax)?;
        let err = r
            .field
            .values()
            .iter()
            .zip(base.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sweep.errors.push(err);
        sweep
            .gradients
            .push(r.probe_gradients.iter().map(|g| g.as_slice().to_vec()).collect());
        sweep.velocities.push(
            r.probe_records
                .iter()
                .map(|rec| rec.best().iter().zip(&rec.x).map(|(y, x)| (y - x) / t).collect())
                .collect(),
        );
        sweep.gradient_lipschitz.push(r.gradient_lipschitz);
        sweep.kappa0.push(r.kappa0);
        sweep.fields.push(r.field);
    }
    sweep.monotone = sweep.errors.windows(2).all(|w| w[1] <= w[0]);
    for p in 0..probe_points.len() {
        let gs: Vec<Vec<f64>> = sweep.gradients.iter().map(|row| row[p].clone()).collect();
        let (g, ok) = extrapolate(&gs, 1e-3);
        sweep.gradient_limits.push(g);
        sweep.cauchy.push(ok);
        let vs: Vec<Vec<f64>> = sweep.velocities.iter().map(|row| row[p].clone()).collect();
        sweep.velocity_limits.push(extrapolate(&vs, 1e-3).0);
    }
    Ok(sweep)
}

/// Brute-force minimizer of `H(t, x, ·)` over the hull by sampling: a
/// uniform grid of step `step` on the interval in 1D, a zooming grid on the bounding box
/// (kept inside the polygon) in 2D, barycentric samples otherwise.
pub fn brute_force_q(h: &dyn Hamiltonian, t: f64, x: &[f64], s: &SuperdiffSet, step: f64) -> Vec<f64> {
    let verts = &s.vertices;
    let n = s.dim();
    let mut best = (f64::INFINITY, verts[0].clone());
    let consider = |best: &mut (f64, Vec<f64>), p: Vec<f64>| {
        let v = h.value(t, x, &p);
        if v < best.0 {
            *best = (v, p);
        }
    };
    if verts.len() == 1 {
        return verts[0].clone();
    }
    match n {
        1 => {
            let (lo, hi) = (verts[0][0].min(verts[1][0]), verts[0][0].max(verts[1][0]));
            let m = ((hi - lo) / step).ceil() as usize;
            for i in 0..=m {
                consider(&mut best, vec![(lo + i as f64 * step).min(hi)]);
            }
        }
        2 => {
            let lo: Vec<f64> = (0..2).map(|a| verts.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = (0..2).map(|a| verts.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
            let inside = |p: &[f64]| {
                let m = verts.len();
                (0..m).all(|i| {
                    let (a, b) = (&verts[i], &verts[(i + 1) % m]);
                    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
                })
            };
            // Coarse sampling of the box, then repeated resampling of a window
            // around the incumbent until the step reaches `step`.
            let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
            let mut h_step = step.max(span / 512.0);
            let (mut wlo, mut whi) = (lo.clone(), hi.clone());
            loop {
                let m0 = ((whi[0] - wlo[0]) / h_step).ceil() as usize;
                let m1 = ((whi[1] - wlo[1]) / h_step).ceil() as usize;
                for i in 0..=m0 {
                    for j in 0..=m1 {
                        let p = vec![(wlo[0] + i as f64 * h_step).min(whi[0]), (wlo[1] + j as f64 * h_step).min(whi[1])];
                        if verts.len() < 3 || inside(&p) {
                            consider(&mut best, p);
                        }
                    }
                }
                if h_step <= step {
                    break;
                }
                let c = best.1.clone();
                for a in 0..2 {
                    wlo[a] = (c[a] - 4.0 * h_step).max(lo[a]);
                    whi[a] = (c[a] + 4.0 * h_step).min(hi[a]);
                }
                h_step = (h_step / 64.0).max(step);
            }
            for v in verts {
                consider(&mut best, v.clone());
            }
        }
        _ => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let samples = (1.0 / step).powi(2).min(1e6) as usize;
            for _ in 0..samples {
                let w: Vec<f64> = verts.iter().map(|_| -rng.gen_range(1e-12..1.0f64).ln()).collect();
                let total: f64 = w.iter().sum();
                consider(&mut best, (0..n).map(|a| verts.iter().zip(&w).map(|(v, wi)| v[a] * wi / total).sum()).collect());
            }
        }
    }
    best.1
}

/// Extrapolated gradient limit against `q^λ_x`.
#[derive(Clone, Debug, Serialize)]
pub struct GradientComparison {
    pub x: Vec<f64>,
    pub limit: Vec<f64>,
    pub q: Vec<f64>,
    pub h_value: f64,
    pub distance: f64,
    pub superdiff: SuperdiffSet,
    pub brute_force_q: Vec<f64>,
    /// `|q − q_bruteforce|`.
    pub brute_force_gap: f64,
    pub singular: bool,
}

/// Compares the sweep's gradient limit at `x` with the minimizer of `H` over
/// `D⁺u^λ(x)`.
pub fn gradient_limit_vs_qx(
    sweep: &RegularizationSweep,
    u: &GridFunction,
    h: &dyn Hamiltonian,
    x: &[f64],
) -> Result<GradientComparison> {
    let p = sweep
        .probe_index(x)
        .ok_or_else(|| Error::InvalidInput(format!("{x:?} is not a probe point of the sweep")))?;
    let s = superdifferential(u, x, default_radius(u), default_cluster_tol(u))?;
    let QMinimum { q, value, .. } = min_h_over_superdiff(h, 0.0, x, &s)?;
    let bf = brute_force_q(h, 0.0, x, &s, 1e-6_f64.max(s.diameter * 1e-6));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let limit = sweep.gradient_limits[p].clone();
    Ok(GradientComparison {
        x: x.to_vec(),
        distance: dist(&limit, &q),
        brute_force_gap: dist(&bf, &q),
        singular: s.diameter > SINGULAR_DIAMETER_FACTOR * u.grid().max_spacing(),
        limit,
        q,
        h_value: value,
        superdiff: s,
        brute_force_q: bf,
    })
}

/// Maximizers `y_{t,x₀}` from a singular point along a decreasing `t_grid`.
#[derive(Clone, Debug, Serialize)]
pub struct SingularTrace {
    pub x0: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub maximizers: Vec<Vec<f64>>,
    pub singular: Vec<bool>,
    pub unique: Vec<bool>,
    pub diameters: Vec<f64>,
    /// `|y_{t,x₀} − x₀| − κ₀·t` (nonpositive when localized).
    pub localization_slack: Vec<f64>,
    pub kappa0: Vec<f64>,
    /// `(y_{t,x₀} − x₀)/t` per `t`.
    pub difference_quotients: Vec<Vec<f64>>,
    pub right_derivative: Vec<f64>,
    pub q: Vec<f64>,
    /// `H_p(x₀, q)`.
    pub v0: Vec<f64>,
    /// Largest `|y_{t_k} − y_{t_{k+1}}|` over consecutive grid times.
    pub max_jump: f64,
    pub superdiff: SuperdiffSet,
    pub t1: f64,
    pub t2: f64,
}

/// Largest `t` with `C'''(t)/t > C₂`, and the largest `t` below which every
/// maximizer at `x₀` is unique.
#[derive(Clone, Debug, Serialize)]
pub struct ConcavityWindow {
    pub t1: f64,
    pub t2: f64,
    /// Semiconcavity constant of `u^λ` near `x₀` (singular nodes masked).
    pub c2: f64,
    pub t_grid: Vec<f64>,
    pub c_ppp: Vec<f64>,
    pub unique: Vec<bool>,
}

/// Strict-concavity window `(t₁, t₂)` at `x₀` over `t_grid`.
///
/// `C'''(t)` is the empirical uniform-convexity constant of `A^λ_{0,t}(x₀, ·)`,
/// so the barrier `u^λ − A^λ` is strictly concave near `x₀` once
/// `C'''(t)/t > C₂`.
pub fn strict_concavity_window(
    sol: &DiscountedSolution,
    l: &Arc<dyn TonelliLagrangian>,
    x0: &[f64],
    t_grid: &[f64],
    cfg: &ProbeConfig,
) -> Result<ConcavityWindow> {
    let mut ts = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    let t_max = *ts.last().ok_or_else(|| Error::InvalidInput("empty t grid".into()))?;
    let lifted = lifted_for(sol, l, t_max)?;
    let u = &sol.u;
    let h = u.grid().max_spacing();
    let singular = singular_set(u, SINGULAR_DIAMETER_FACTOR * h);
    let reach = 10.0 * h + crate::laxoleinik::kappa0_bound(&lifted.kernel, u.lipschitz(), 0.0, t_max, x0) * t_max;
    let region = Region::new(
        x0.iter().map(|c| c - reach).collect(),
        x0.iter().map(|c| c + reach).collect(),
    );
    let c2 = semiconcavity_constant_masked(u, &region, &singular).constant;
    let cone = crate::laxoleinik::kappa0_bound(&lifted.kernel, u.lipschitz(), 0.0, t_max, x0);
    let report = probe_convexity(lifted.kernel.lagrangian(), x0, 0.0, cone.max(1e-3), &ts, cfg);
    let table = &report.tables["by_T"];
    let c_ppp = table.column("C_ppp").unwrap_or_default();
    let mut t2 = 0.0;
    for (t, c) in ts.iter().zip(&c_ppp) {
        if *c / *t > c2 {
            t2 = *t;
        } else {
            break;
        }
    }
    let mut unique = Vec::with_capacity(ts.len());
    for &t in &ts {
        // A maximizer that cannot be computed is not certified unique.
        let ok = lax_plus_at(u, &lifted.kernel, 0.0, t, x0, &LaxOptions::default())
            .map(|pv| pv.record.unique)
            .unwrap_or(false);
        unique.push(ok);
    }
    let mut t1 = 0.0;
    for (t, ok) in ts.iter().zip(&unique) {
        if *ok {
            t1 = *t;
        } else {
            break;
        }
    }
    Ok(ConcavityWindow {
        t1,
        t2,
        c2,
        t_grid: ts,
        c_ppp,
        unique,
    })
}

/// Follows `y_{t,x₀}` over `t_grid` (sorted decreasing) and checks that each
/// one is singular for `u^λ`.
///
/// Fails with `NotSingular` when `x₀` itself is not singular.
pub fn trace_singularity(
    sol: &DiscountedSolution,
    l: &Arc<dyn TonelliLagrangian>,
    x0: &[f64],
    t_grid: &[f64],
    cfg: &ProbeConfig,
) -> Result<SingularTrace> {
    let u = &sol.u;
    let hsp = u.grid().max_spacing();
    let threshold = SINGULAR_DIAMETER_FACTOR * hsp;
    let (sing, superdiff) = is_singular(u, x0, threshold)?;
    if !sing {
        return Err(Error::NotSingular {
            x: x0.to_vec(),
            diameter: superdiff.diameter,
            threshold,
        });
    }
    let ham = hamiltonian_of(l);
    let qm = min_h_over_superdiff(ham.as_ref(), 0.0, x0, &superdiff)?;
    let v0 = ham.grad_p_vec(0.0, x0, &qm.q).as_slice().to_vec();
    let mut ts = t_grid.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    let t_max = *ts.first().ok_or_else(|| Error::InvalidInput("empty t grid".into()))?;
    let lifted = lifted_for(sol, l, t_max)?;
    let mut trace = SingularTrace {
        x0: x0.to_vec(),
        t_grid: ts.clone(),
        maximizers: Vec::new(),
        singular: Vec::new(),
        unique: Vec::new(),
        diameters: Vec::new(),
        localization_slack: Vec::new(),
        kappa0: Vec::new(),
        difference_quotients: Vec::new(),
        right_derivative: Vec::new(),
        q: qm.q.clone(),
        v0,
        max_jump: 0.0,
        superdiff,
        t1: 0.0,
        t2: 0.0,
    };
    for &t in &ts {
        let pv = lax_plus_at(u, &lifted.kernel, 0.0, t, x0, &LaxOptions::default())?;
        let y = pv.record.best().to_vec();
        let (flag, s) = match is_singular(u, &y, threshold) {
            Ok((f, s)) => (f, s.diameter),
            Err(Error::InsufficientSamples { .. }) => (false, 0.0),
            Err(e) => return Err(e),
        };
        let d = y.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        trace.localization_slack.push(d - pv.record.kappa0 * t);
        trace.kappa0.push(pv.record.kappa0);
        trace.difference_quotients.push(y.iter().zip(x0).map(|(a, b)| (a - b) / t).collect());
        trace.singular.push(flag);
        trace.diameters.push(s);
        trace.unique.push(pv.record.unique);
        trace.maximizers.push(y);
    }
    trace.max_jump = trace
        .maximizers
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    trace.right_derivative = extrapolate(&trace.difference_quotients, 1e-3).0;
    let window = strict_concavity_window(sol, l, x0, &ts, cfg)?;
    trace.t1 = window.t1;
    trace.t2 = window.t2;
    Ok(trace)
}

/// Tabulates `q^λ_x` across a decreasing `λ` grid.
///
/// When `reference` holds the `q_x` of a known critical solution, the
/// distance to it is tabulated too. No pass/fail contract is attached beyond
/// solver success.
pub fn lambda_sweep_problem_probe(
    l: &Arc<dyn TonelliLagrangian>,
    lambda_grid: &[f64],
    x_points: &[Vec<f64>],
    grid: &Grid,
    dt: f64,
    reference: Option<&[Vec<f64>]>,
) -> ProbeReport {
    let mut report = ProbeReport::new("lambda_sweep");
    let n = grid.dim();
    let mut cols = vec!["lambda".to_string(), "point".to_string()];
    cols.extend((1..=n).map(|a| format!("q{a}")));
    cols.push("diameter".into());
    cols.push("reference_distance".into());
    let mut table = Table::new(cols);
    let ham = hamiltonian_of(l);
    for &lambda in lambda_grid {
        let sol = match solve_discounted(l, lambda, grid, dt, 1e-9) {
            Ok(s) => s,
            Err(e) => {
                report.check(-1.0, || format!("lambda {lambda}: {e}"));
                continue;
            }
        };
        for (i, x) in x_points.iter().enumerate() {
            report.samples += 1;
            let res = superdifferential(&sol.u, x, default_radius(&sol.u), default_cluster_tol(&sol.u))
                .and_then(|s| Ok((min_h_over_superdiff(ham.as_ref(), 0.0, x, &s)?, s.diameter)));
            match res {
                Ok((qm, diam)) => {
                    let refd = reference
                        .and_then(|r| r.get(i))
                        .map(|r| r.iter().zip(&qm.q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                        .unwrap_or(f64::NAN);
                    let mut row = vec![lambda, i as f64];
                    row.extend(qm.q.iter().copied());
                    row.push(diam);
                    row.push(refd);
                    table.push(row);
                }
                Err(e) => report.check(-1.0, || format!("lambda {lambda}, x {x:?}: {e}")),
            }
        }
    }
    if let Some(col) = table.column("reference_distance") {
        let worst = col.iter().copied().filter(|v| v.is_finite()).fold(f64::NAN, f64::max);
        if worst.is_finite() {
            report.set("max_reference_distance", worst);
        }
    }
    report.tables.insert("q_by_lambda".into(), table);
    report
}

