//! The discounted equation `λu + H(x, Du) = 0` on a grid, its evolution
//! lift `v(t, x) = e^{λt}u(x)`, and backward calibrated curves.
//!
//! The solver iterates the one-step dynamic-programming operator
//!
//! ```text
//! 𝒯u(x) = min_v  w·L(x, v) + β·u(x − dt·v),   β = e^{−λ dt},  w = (1 − β)/λ,
//! ```
//!
//! where `w = ∫_{−dt}^0 e^{λτ} dτ` is the exact discount weight of a step, so
//! constants solve the scheme exactly. The running cost is evaluated at the
//! discount-weighted mean point `x − c·v` of the straight segment rather than
//! at `x`, which makes the scheme second order in `dt`.
//!
//! In one dimension the minimization is exact for the piecewise-linear
//! interpolant, one convex problem per cell. In higher dimensions it starts
//! from the best node foot and runs the stationarity fixed point.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::action::{fmt_num, Curve};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, GridFunction};
use crate::regularity::one_sided;
use crate::lagrangian::{coercivity_radius, hamiltonian_of, Hamiltonian, Point, TonelliLagrangian};

/// Solver settings beyond the step and tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountedOptions {
    pub max_iter: usize,
    /// Starting field; defaults to the constant `min_x L(x, 0)/λ`.
    pub initial: Option<GridFunction>,
    /// One-sided slopes closer than this multiple of the spacing count as a
    /// differentiability node for the residual.
    pub smooth_spread: f64,
}

impl Default for DiscountedOptions {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            initial: None,
            smooth_spread: 5.0,
        }
    }
}

/// Fixed point of the discounted scheme with its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct DiscountedSolution {
    pub lambda: f64,
    pub dt: f64,
    #[serde(skip)]
    pub u: GridFunction,
    /// `max |λu + H(x, Du)|` over differentiability nodes.
    pub residual: f64,
    pub residual_nodes: usize,
    pub iterations: usize,
    /// `e^{−λ dt}`.
    pub contraction_factor: f64,
    /// Largest observed ratio of successive increments `‖u_{k+1} − u_k‖/‖u_k − u_{k−1}‖`.
    pub measured_contraction: f64,
    /// `‖𝒯u − u‖_∞` at exit.
    pub fixed_point_defect: f64,
    pub tol_fp: f64,
}

impl DiscountedSolution {
    /// `e^{λt}·u` on the same grid.
    pub fn lift(&self, t: f64) -> GridFunction {
        lift_to_evolution(self, t)
    }

    /// Writes the metadata as JSON.
    pub fn metadata_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("solution metadata serializes");
        v["grid"] = serde_json::to_value(self.u.header()).expect("grid header serializes");
        v
    }
}

/// One application of the scheme with the optimal velocity at every node.
pub struct BellmanStep {
    pub values: GridFunction,
    pub velocities: Vec<Point>,
}

struct Scheme<'a> {
    l: &'a dyn TonelliLagrangian,
    h: Arc<dyn Hamiltonian>,
    dt: f64,
    beta: f64,
    weight: f64,
    /// Lag of the weighted mean point behind `x`, per unit velocity.
    lag: f64,
}

impl<'a> Scheme<'a> {
    fn new(l: &'a Arc<dyn TonelliLagrangian>, lambda: f64, dt: f64) -> Self {
        let beta = (-lambda * dt).exp();
        let one_minus_beta = -(-lambda * dt).exp_m1();
        Self {
            l: l.as_ref(),
            h: hamiltonian_of(l),
            dt,
            beta,
            weight: one_minus_beta / lambda,
            lag: 1.0 / lambda - dt * beta / one_minus_beta,
        }
    }

    /// Bound on optimal speeds: moving at speed `r` costs at least
    /// `w(θ(r) − c₀ − L(x, 0))` more than resting and gains at most
    /// `β·Lip(u)·dt·r`.
    fn speed_bound(&self, u: &GridFunction, rest_max: f64) -> f64 {
        let g = self.l.growth();
        let gain = self.beta * self.dt * u.lipschitz() / self.weight;
        coercivity_radius(&g.lower, gain, g.c0 + rest_max)
    }

    fn mean_point(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter().zip(v).map(|(xi, vi)| xi - self.lag * vi).collect()
    }

    fn running(&self, x: &[f64], v: &[f64]) -> f64 {
        self.weight * self.l.value(0.0, &self.mean_point(x, v), v)
    }

    fn objective(&self, u: &GridFunction, x: &[f64], v: &[f64]) -> f64 {
        let foot: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi - self.dt * vi).collect();
        self.running(x, v) + self.beta * u.interpolate(&foot)
    }

    /// Stationary velocity of `running(x, ·) − β·⟨g, x − dt·v⟩`:
    /// `L_v(m, v) = β·dt·g/w + c·L_x(m, v)` with `m = x − c·v`.
    fn stationary(&self, x: &[f64], g: &[f64], start: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut q = vec![0.0; n];
        let mut lx = vec![0.0; n];
        out.copy_from_slice(start);
        for _ in 0..12 {
            let m = self.mean_point(x, out);
            self.l.grad_x(0.0, &m, out, &mut lx);
            for a in 0..n {
                q[a] = self.beta * self.dt * g[a] / self.weight + self.lag * lx[a];
            }
            let prev: Vec<f64> = out.to_vec();
            self.h.grad_p(0.0, &m, &q, out);
            let change = out.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + out.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
            if change <= 1e-14 * scale {
                break;
            }
        }
    }

    fn stationary_1d(&self, x: f64, slope: f64, start: f64, v: &mut [f64; 1]) -> f64 {
        let mut lx = [0.0];
        let mut q = [0.0];
        v[0] = start;
        for _ in 0..12 {
            let m = [x - self.lag * v[0]];
            self.l.grad_x(0.0, &m, &v[..], &mut lx);
            q[0] = self.beta * self.dt * slope / self.weight + self.lag * lx[0];
            let prev = v[0];
            self.h.grad_p(0.0, &m, &q, &mut v[..]);
            if (v[0] - prev).abs() <= 1e-13 * (1.0 + v[0].abs()) {
                break;
            }
        }
        v[0]
    }

    /// Running cost at velocity `v` and its derivative in `v`.
    fn running_1d(&self, x: f64, v: f64) -> (f64, f64) {
        let m = [x - self.lag * v];
        let vs = [v];
        let mut lx = [0.0];
        let mut lv = [0.0];
        self.l.grad_x(0.0, &m, &vs, &mut lx);
        self.l.grad_v(0.0, &m, &vs, &mut lv);
        (
            self.weight * self.l.value(0.0, &m, &vs),
            self.weight * (lv[0] - self.lag * lx[0]),
        )
    }

    fn node_1d(&self, u: &GridFunction, x: f64, radius: f64) -> (f64, f64) {
        let grid = u.grid();
        let hx = grid.spacing(0);
        let lo = ((x - self.dt * radius - grid.lower[0]) / hx).floor() as i64 - 1;
        let hi = ((x + self.dt * radius - grid.lower[0]) / hx).ceil() as i64 + 1;
        let mut best = (f64::INFINITY, 0.0);
        let mut v = [0.0];
        // Node feet are the cell endpoints; a cell needs an inner solve only
        // when the endpoint derivatives bracket a stationary point.
        let mut left = {
            let vk = (x - grid.coord(0, lo)) / self.dt;
            let (e, d) = self.running_1d(x, vk);
            (vk, e, d, u.at(&[lo]))
        };
        for j in lo..hi {
            let b = grid.coord(0, j + 1);
            let vmin = (x - b) / self.dt;
            let (e, d) = self.running_1d(x, vmin);
            let right = (vmin, e, d, u.at(&[j + 1]));
            let (vmax, ea, da, ua) = left;
            let ub = right.3;
            let slope = (ub - ua) / hx;
            let pull = self.beta * self.dt * slope;
            for (vk, ek, uk) in [(vmax, ea, ua), (vmin, e, ub)] {
                let val = ek + self.beta * uk;
                if val < best.0 {
                    best = (val, vk);
                }
            }
            if d - pull < 0.0 && da - pull > 0.0 {
                let vc = self.stationary_1d(x, slope, 0.5 * (vmin + vmax), &mut v).clamp(vmin, vmax);
                let a = b - hx;
                let foot = x - self.dt * vc;
                let (ec, _) = self.running_1d(x, vc);
                let val = ec + self.beta * (ua + slope * (foot - a));
                if val < best.0 {
                    best = (val, vc);
                }
            }
            left = right;
        }
        best
    }

    fn node_nd(&self, u: &GridFunction, x: &[f64], radius: f64, warm: &[f64]) -> (f64, Vec<f64>) {
        let grid = u.grid();
        let n = grid.dim();
        let mut best_v = warm.to_vec();
        let mut best = self.objective(u, x, &best_v);
        let zero = vec![0.0; n];
        let z = self.objective(u, x, &zero);
        if z < best {
            best = z;
            best_v = zero;
        }
        // Feet at grid nodes inside the reachable ball.
        let reach = self.dt * radius;
        let ranges: Vec<(i64, i64)> = (0..n)
            .map(|a| {
                let h = grid.spacing(a);
                (
                    ((x[a] - reach - grid.lower[a]) / h).floor() as i64,
                    ((x[a] + reach - grid.lower[a]) / h).ceil() as i64,
                )
            })
            .collect();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        let mut v = vec![0.0; n];
        'scan: loop {
            for a in 0..n {
                v[a] = (x[a] - grid.coord(a, idx[a])) / self.dt;
            }
            let val = self.running(x, &v) + self.beta * u.at(&idx);
            if val < best {
                best = val;
                best_v.copy_from_slice(&v);
            }
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] <= ranges[a].1 {
                    continue 'scan;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
        // Stationarity iteration within the current cell.
        let mut cand = vec![0.0; n];
        for _ in 0..20 {
            let foot: Vec<f64> = x.iter().zip(&best_v).map(|(xi, vi)| xi - self.dt * vi).collect();
            let g = u.interpolate_gradient(&foot);
            self.stationary(x, &g, &best_v, &mut cand);
            let val = self.objective(u, x, &cand);
            if val < best - 1e-15 * best.abs().max(1.0) {
                best = val;
                best_v.copy_from_slice(&cand);
            } else {
                break;
            }
        }
        (best, best_v)
    }

    fn step(&self, u: &GridFunction, warm: Option<&[Point]>, rest_max: f64) -> Result<BellmanStep> {
        let grid = u.grid();
        let radius = self.speed_bound(u, rest_max);
        let nodes: Vec<Vec<f64>> = grid.nodes().collect();
        let n = grid.dim();
        let results: Vec<(f64, Point)> = nodes
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                if n == 1 {
                    let (val, v) = self.node_1d(u, x[0], radius);
                    (val, Point::from_element(1, v))
                } else {
                    let w = warm.map(|w| w[k].as_slice().to_vec()).unwrap_or_else(|| vec![0.0; n]);
                    let (val, v) = self.node_nd(u, x, radius, &w);
                    (val, Point::from_vec(v))
                }
            })
            .collect();
        if grid.boundary == Boundary::ConstantExtend {
            for (x, (_, v)) in nodes.iter().zip(&results) {
                let foot: Vec<f64> = x.iter().zip(v.iter()).map(|(xi, vi)| xi - self.dt * vi).collect();
                let outside = (0..n).any(|a| {
                    let tol = 1e-9 * grid.spacing(a);
                    foot[a] < grid.lower[a] - tol || foot[a] > grid.upper[a] + tol
                });
                if outside {
                    return Err(Error::BoxExhausted {
                        node: x.clone(),
                        foot,
                    });
                }
            }
        }
        let (values, velocities): (Vec<f64>, Vec<Point>) = results.into_iter().unzip();
        Ok(BellmanStep {
            values: GridFunction::new(grid.clone(), values)?,
            velocities,
        })
    }

    fn rest_max(&self, grid: &Grid) -> f64 {
        let zero = vec![0.0; grid.dim()];
        grid.nodes()
            .map(|x| self.l.value(0.0, &x, &zero))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn validate(l: &Arc<dyn TonelliLagrangian>, lambda: f64, dt: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !l.is_time_independent() {
        return Err(Error::InvalidInput("the discounted solver needs a time-independent Lagrangian".into()));
    }
    Ok(())
}

/// One application of the scheme to `u`, with the optimal velocities.
pub fn bellman_step(
    l: &Arc<dyn TonelliLagrangian>,
    lambda: f64,
    dt: f64,
    u: &GridFunction,
) -> Result<BellmanStep> {
    validate(l, lambda, dt)?;
    if l.dim() != u.dim() {
        return Err(Error::InvalidInput("grid and Lagrangian dimensions differ".into()));
    }
    let scheme = Scheme::new(l, lambda, dt);
    scheme.step(u, None, scheme.rest_max(u.grid()))
}

/// Fixed point of the scheme to within `tol_fp` in sup norm.
pub fn solve_discounted(
    l: &Arc<dyn TonelliLagrangian>,
    lambda: f64,
    grid: &Grid,
    dt: f64,
    tol_fp: f64,
) -> Result<DiscountedSolution> {
    solve_discounted_with(l, lambda, grid, dt, tol_fp, &DiscountedOptions::default())
}

pub fn solve_discounted_with(
    l: &Arc<dyn TonelliLagrangian>,
    lambda: f64,
    grid: &Grid,
    dt: f64,
    tol_fp: f64,
    opts: &DiscountedOptions,
) -> Result<DiscountedSolution> {
    validate(l, lambda, dt)?;
    if !(tol_fp > 0.0) {
        return Err(Error::InvalidInput(format!("tol_fp must be positive, got {tol_fp}")));
    }
    if l.dim() != grid.dim() {
        return Err(Error::InvalidInput("grid and Lagrangian dimensions differ".into()));
    }
    let scheme = Scheme::new(l, lambda, dt);
    let zero = vec![0.0; grid.dim()];
    let rest_max = scheme.rest_max(grid);
    let mut u = match &opts.initial {
        Some(u0) => {
            if u0.grid() != grid {
                return Err(Error::InvalidInput("initial field lives on a different grid".into()));
            }
            u0.clone()
        }
        None => {
            let rest_min = grid
                .nodes()
                .map(|x| l.value(0.0, &x, &zero))
                .fold(f64::INFINITY, f64::min);
            GridFunction::from_fn(grid.clone(), |_| rest_min / lambda)
        }
    };
    let stop = tol_fp * (1.0 - scheme.beta);
    let mut prev_inc = f64::NAN;
    let mut measured: f64 = 0.0;
    let mut warm: Option<Vec<Point>> = None;
    let mut iterations = 0;
    let mut defect;
    loop {
        let next = scheme.step(&u, warm.as_deref(), rest_max)?;
        iterations += 1;
        defect = next
            .values
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let floor = 1e-12 * (1.0 + u.max_abs());
        if prev_inc > floor && defect > floor {
            let ratio = defect / prev_inc;
            measured = measured.max(ratio);
            let bound = scheme.beta * (1.0 + 1e-6) + 4.0 * floor / prev_inc;
            if ratio > bound {
                return Err(Error::NonContraction {
                    ratio,
                    bound: scheme.beta,
                });
            }
        }
        prev_inc = defect;
        u = next.values;
        warm = Some(next.velocities);
        if defect <= stop {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: defect,
            });
        }
    }
    let (residual, residual_nodes) = pde_residual(scheme.h.as_ref(), lambda, &u, opts.smooth_spread);
    Ok(DiscountedSolution {
        lambda,
        dt,
        u,
        residual,
        residual_nodes,
        iterations,
        contraction_factor: scheme.beta,
        measured_contraction: measured,
        fixed_point_defect: defect,
        tol_fp,
    })
}

/// `max |λu + H(x, Du)|` over nodes whose one-sided slopes differ by at most
/// `spread·h` on every axis, with `Du` the central difference.
pub fn pde_residual(h: &dyn Hamiltonian, lambda: f64, u: &GridFunction, spread: f64) -> (f64, usize) {
    let grid = u.grid();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for k in 0..grid.len() {
        let Some((m, p)) = one_sided(u, k) else { continue };
        let smooth = m
            .iter()
            .zip(&p)
            .enumerate()
            .all(|(a, (l, r))| (r - l).abs() <= spread * grid.spacing(a));
        if !smooth {
            continue;
        }
        let du: Vec<f64> = m.iter().zip(&p).map(|(l, r)| 0.5 * (l + r)).collect();
        let x = grid.node(k);
        worst = worst.max((lambda * u.values()[k] + h.value(0.0, &x, &du)).abs());
        count += 1;
    }
    (worst, count)
}

/// `v(t, ·) = e^{λt}·u`.
pub fn lift_to_evolution(sol: &DiscountedSolution, t: f64) -> GridFunction {
    sol.u.scaled((sol.lambda * t).exp())
}

/// Backward trajectory of the discounted Hamiltonian flow from `(τ, x)`.
#[derive(Clone, Debug, Serialize)]
pub struct CalibratedCurve {
    pub x: Vec<f64>,
    pub tau: f64,
    pub horizon: f64,
    /// Sample times, decreasing from `τ` to `τ − horizon`.
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Evolution momenta `e^{λs}·p(s)`.
    pub momenta: Vec<Vec<f64>>,
    /// Largest calibration defect over the sample times.
    pub calibration_defect: f64,
    /// Defect at each sample time.
    pub defects: Vec<f64>,
    #[serde(skip)]
    pub curve: Curve,
}

impl CalibratedCurve {
    /// Writes `t,x1..xn,p1..pn` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.x.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt_num(self.times[k])];
            row.extend(self.points[k].iter().map(|v| fmt_num(*v)));
            row.extend(self.momenta[k].iter().map(|v| fmt_num(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Largest one-sided slope gap at `x` across all axes, and the averaged
/// slope, from the interpolant's cell gradients half a spacing to each side.
pub(crate) fn slope_gap(u: &GridFunction, x: &[f64]) -> (f64, Vec<f64>) {
    let grid = u.grid();
    let n = grid.dim();
    let mut gap: f64 = 0.0;
    let mut avg = vec![0.0; n];
    for a in 0..n {
        let h = grid.spacing(a);
        let mut l = x.to_vec();
        l[a] -= 0.5 * h;
        let mut r = x.to_vec();
        r[a] += 0.5 * h;
        let gl = u.interpolate_gradient(&l);
        let gr = u.interpolate_gradient(&r);
        gap = gap.max((gr[a] - gl[a]).abs());
        avg[a] = 0.5 * (gl[a] + gr[a]);
    }
    (gap, avg)
}

/// Integrates `ẋ = H_p(x, p)`, `ṗ = −λp − H_x(x, p)` backward from
/// `(τ, x, Du(x))` with RK4 steps of size `dt`, tracking the discounted
/// action so the calibration identity can be checked along the way.
///
/// Fails with `SingularStart` when the one-sided slopes at `x` differ by more
/// than five grid spacings.
pub fn backward_calibrated_curve(
    sol: &DiscountedSolution,
    l: &Arc<dyn TonelliLagrangian>,
    x: &[f64],
    tau: f64,
    horizon: f64,
    dt: f64,
) -> Result<CalibratedCurve> {
    let u = &sol.u;
    let grid = u.grid();
    let n = grid.dim();
    if x.len() != n || l.dim() != n {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidHorizon(horizon));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let (gap, p0) = slope_gap(u, x);
    let threshold = 5.0 * grid.max_spacing();
    if gap > threshold {
        return Err(Error::SingularStart {
            x: x.to_vec(),
            diameter: gap,
        });
    }
    let h = hamiltonian_of(l);
    let lambda = sol.lambda;
    // State: x (n), p (n), J = ∫_s^τ L^λ.
    let rhs = |s: f64, z: &[f64], out: &mut [f64]| {
        let (xs, ps) = z[..2 * n].split_at(n);
        let mut hp = vec![0.0; n];
        let mut hx = vec![0.0; n];
        h.grad_p(0.0, xs, ps, &mut hp);
        h.grad_x(0.0, xs, ps, &mut hx);
        let lag = ps.iter().zip(&hp).map(|(a, b)| a * b).sum::<f64>() - h.value(0.0, xs, ps);
        for a in 0..n {
            out[a] = hp[a];
            out[n + a] = -lambda * ps[a] - hx[a];
        }
        out[2 * n] = -(lambda * s).exp() * lag;
    };
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let step = horizon / steps as f64;
    let mut z: Vec<f64> = x.iter().copied().chain(p0.iter().copied()).chain([0.0]).collect();
    let v_end = (lambda * tau).exp() * u.interpolate(x);
    let m = 2 * n + 1;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    let mut times = vec![tau];
    let mut points = vec![x.to_vec()];
    let mut momenta = vec![p0.iter().map(|p| (lambda * tau).exp() * p).collect::<Vec<_>>()];
    let mut vels = vec![h.grad_p_vec(0.0, x, &p0)];
    let mut defects = vec![0.0];
    let mut s = tau;
    for _ in 0..steps {
        let dtn = -step;
        rhs(s, &z, &mut k1);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * dtn * k1[i];
        }
        rhs(s + 0.5 * dtn, &tmp, &mut k2);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * dtn * k2[i];
        }
        rhs(s + 0.5 * dtn, &tmp, &mut k3);
        for i in 0..m {
            tmp[i] = z[i] + dtn * k3[i];
        }
        rhs(s + dtn, &tmp, &mut k4);
        for i in 0..m {
            z[i] += dtn / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s += dtn;
        let (xs, ps) = z[..2 * n].split_at(n);
        if grid.boundary == Boundary::ConstantExtend
            && (0..n).any(|a| xs[a] < grid.lower[a] || xs[a] > grid.upper[a])
        {
            return Err(Error::BoxExhausted {
                node: x.to_vec(),
                foot: xs.to_vec(),
            });
        }
        let v_start = (lambda * s).exp() * u.interpolate(xs);
        defects.push((v_end - v_start - z[2 * n]).abs());
        times.push(s);
        points.push(xs.to_vec());
        momenta.push(ps.iter().map(|p| (lambda * s).exp() * p).collect());
        vels.push(h.grad_p_vec(0.0, xs, ps));
    }
    let calibration_defect = defects.iter().copied().fold(0.0, f64::max);
    let curve = Curve::hermite(
        times.iter().rev().copied().collect(),
        points.iter().rev().map(|p| Point::from_column_slice(p)).collect(),
        vels.into_iter().rev().collect(),
    );
    Ok(CalibratedCurve {
        x: x.to_vec(),
        tau,
        horizon,
        times,
        points,
        momenta,
        calibration_defect,
        defects,
        curve,
    })
}
