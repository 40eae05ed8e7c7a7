//! Lax-Oleinik operators
//! `T⁺_{s,t}u(x) = sup_y u(y) − A_{s,t}(x, y)` and
//! `T⁻_{s,t}u(x) = inf_y u(y) + A_{s,t}(y, x)` on grid functions.
//!
//! Each target node is handled independently: nodes of `u` inside the
//! localization ball `B(x, κ₀(t − s))` are scanned, the best local extrema
//! are polished on the continuous (multilinearly interpolated) objective, and
//! the gradient of the result is read off the kernel at the unique optimizer.

use rayon::prelude::*;
use serde::Serialize;

use crate::action::ActionKernel;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::lagrangian::{coercivity_radius, Point};
use crate::probe::{ProbeReport, Table};
use crate::search::{brent_min, nelder_mead};

/// Optimizers of the barrier at one base point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximizerRecord {
    pub x: Vec<f64>,
    /// `t − s`.
    pub gap: f64,
    pub maximizers: Vec<Vec<f64>>,
    /// Barrier values at the maximizers (objective values for `T⁻`).
    pub values: Vec<f64>,
    /// Localization radius per unit time used for the search.
    pub kappa0: f64,
    /// Whether condition (M) holds within the record's tolerances.
    pub unique: bool,
}

impl MaximizerRecord {
    /// The best optimizer (first entry).
    pub fn best(&self) -> &[f64] {
        &self.maximizers[0]
    }
}

/// Settings for operator application.
#[derive(Clone, Debug, PartialEq)]
pub struct LaxOptions {
    /// Nodes at which the operator is evaluated; defaults to the nodes of
    /// `u` whose localization ball stays inside the box.
    pub targets: Option<Grid>,
    /// Overrides the a-priori localization constant.
    pub kappa0: Option<f64>,
    /// Barrier values within this of the best count as ties.
    pub value_tol: f64,
    /// Ties farther apart than this break uniqueness; defaults to twice the spacing.
    pub spatial_tol: Option<f64>,
    /// Polish scanned optima on the continuous objective.
    pub refine: bool,
}

impl Default for LaxOptions {
    fn default() -> Self {
        Self {
            targets: None,
            kappa0: None,
            value_tol: 1e-7,
            spatial_tol: None,
            refine: true,
        }
    }
}

/// Operator values on the target grid with per-node optimizer records and
/// gradients (present where the optimizer is unique).
#[derive(Clone, Debug)]
pub struct LaxOutput {
    pub values: GridFunction,
    pub records: Vec<MaximizerRecord>,
    pub gradients: Vec<Option<Point>>,
    /// Largest localization constant used over the targets.
    pub kappa0: f64,
}

/// Result of applying an operator at a single point.
#[derive(Clone, Debug)]
pub struct PointValue {
    pub value: f64,
    pub record: MaximizerRecord,
    pub gradient: Option<Point>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Direction {
    /// `sup_y u(y) − A(x, y)`.
    Plus,
    /// `inf_y u(y) + A(y, x)`.
    Minus,
}

/// `ψ^x_{t₀,t}(y) = u(y) − A_{t₀,t}(x, y)`.
pub fn barrier(
    u: &GridFunction,
    kernel: &ActionKernel,
    t0: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    Ok(u.interpolate(y) - kernel.value(t0, t, x, y)?)
}

/// A-priori localization constant at `x`: the largest speed `r` with
/// `θ(r) − Lip(u)·r ≤ c₀ + max_τ L(τ, x, 0)`.
///
/// Any optimizer moving at a larger average speed pays more action than the
/// constant curve at `x` can gain from the Lipschitz bound on `u`.
pub fn kappa0_bound(kernel: &ActionKernel, lip: f64, s: f64, t: f64, x: &[f64]) -> f64 {
    let l = kernel.lagrangian();
    let growth = l.growth();
    let zero = vec![0.0; l.dim()];
    let rest = (0..=4)
        .map(|k| l.value(s + (t - s) * k as f64 / 4.0, x, &zero))
        .fold(f64::NEG_INFINITY, f64::max);
    coercivity_radius(&growth.lower, lip, growth.c0 + rest)
}

fn spatial_tol(u: &GridFunction, opts: &LaxOptions) -> f64 {
    opts.spatial_tol.unwrap_or(2.0 * u.grid().max_spacing())
}

/// Condition (M): all optimizers within `value_tol` of the best lie within
/// `spatial_tol` of each other.
pub fn check_condition_m(record: &MaximizerRecord, value_tol: f64, spatial_tol: f64) -> bool {
    let Some(best) = record.values.iter().copied().reduce(f64::max) else {
        return false;
    };
    let close: Vec<&Vec<f64>> = record
        .maximizers
        .iter()
        .zip(&record.values)
        .filter(|(_, v)| **v >= best - value_tol)
        .map(|(y, _)| y)
        .collect();
    close.iter().enumerate().all(|(i, a)| {
        close[i + 1..].iter().all(|b| {
            a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() <= spatial_tol
        })
    })
}

struct Search<'a> {
    u: &'a GridFunction,
    kernel: &'a ActionKernel,
    s: f64,
    t: f64,
    dir: Direction,
    opts: &'a LaxOptions,
    lip: f64,
}

impl Search<'_> {
    /// Objective to maximize: `u(y) − A(x, y)` for `T⁺`, `−u(y) − A(y, x)` for `T⁻`.
    fn objective(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(match self.dir {
            Direction::Plus => self.u.interpolate(y) - self.kernel.value(self.s, self.t, x, y)?,
            Direction::Minus => -self.u.interpolate(y) - self.kernel.value(self.s, self.t, y, x)?,
        })
    }

    fn kappa(&self, x: &[f64]) -> f64 {
        self.opts
            .kappa0
            .unwrap_or_else(|| kappa0_bound(self.kernel, self.lip, self.s, self.t, x))
    }

    fn at(&self, x: &[f64]) -> Result<PointValue> {
        let grid = self.u.grid();
        let n = grid.dim();
        let gap = self.t - self.s;
        let kappa = self.kappa(x);
        let radius = kappa * gap;
        if !grid.contains_ball(x, radius) {
            return Err(Error::SearchBallClipped {
                center: x.to_vec(),
                radius,
            });
        }

        // Scan the grid nodes inside the ball (unwrapped coordinates).
        let ranges: Vec<(i64, i64)> = (0..n)
            .map(|a| {
                let h = grid.spacing(a);
                let lo = ((x[a] - radius - grid.lower[a]) / h - 1e-9).ceil() as i64;
                let hi = ((x[a] + radius - grid.lower[a]) / h + 1e-9).floor() as i64;
                (lo, hi)
            })
            .collect();
        let mut pts: Vec<(Vec<i64>, Vec<f64>)> = Vec::new();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let y: Vec<f64> = (0..n).map(|a| grid.coord(a, idx[a])).collect();
            let d2: f64 = y.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
            if d2 <= radius * radius * (1.0 + 1e-12) + 1e-24 {
                pts.push((idx.clone(), y));
            }
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] <= ranges[a].1 {
                    continue 'outer;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
        // The base point is always feasible.
        pts.push((Vec::new(), x.to_vec()));

        let mut vals = Vec::with_capacity(pts.len());
        for (_, y) in &pts {
            vals.push(self.objective(x, y)?);
        }
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        // Local maxima among scanned nodes close to the best.
        let lookup: std::collections::HashMap<&[i64], f64> = pts
            .iter()
            .zip(&vals)
            .filter(|((i, _), _)| !i.is_empty())
            .map(|((i, _), v)| (i.as_slice(), *v))
            .collect();
        let screen = self.opts.value_tol.max(1e-9 * (1.0 + best.abs())) + 1e-6 * (1.0 + best.abs());
        let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
        for ((i, y), v) in pts.iter().zip(&vals) {
            if *v < best - screen {
                continue;
            }
            if !i.is_empty() {
                let mut is_max = true;
                for a in 0..n {
                    for d in [-1, 1] {
                        let mut j = i.clone();
                        j[a] += d;
                        if let Some(w) = lookup.get(j.as_slice()) {
                            if *w > *v {
                                is_max = false;
                            }
                        }
                    }
                }
                if !is_max {
                    continue;
                }
            }
            candidates.push((*v, y.clone()));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(4);

        // Polish on the continuous objective within the ball.
        let mut refined: Vec<(f64, Vec<f64>)> = Vec::new();
        for (v, y) in candidates {
            if !self.opts.refine {
                refined.push((v, y));
                continue;
            }
            let (yr, vr) = self.polish(x, &y, radius)?;
            if vr >= v {
                refined.push((vr, yr));
            } else {
                refined.push((v, y));
            }
        }
        refined.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top = refined[0].0;
        let stol = spatial_tol(self.u, self.opts);
        let mut kept: Vec<(f64, Vec<f64>)> = Vec::new();
        for (v, y) in refined {
            if v < top - self.opts.value_tol {
                continue;
            }
            let dup = kept.iter().any(|(_, z)| {
                z.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() <= 1e-9
            });
            if !dup {
                kept.push((v, y));
            }
        }

        let mut record = MaximizerRecord {
            x: x.to_vec(),
            gap,
            maximizers: kept.iter().map(|(_, y)| y.clone()).collect(),
            values: kept.iter().map(|(v, _)| *v).collect(),
            kappa0: kappa,
            unique: false,
        };
        record.unique = check_condition_m(&record, self.opts.value_tol, stol);
        let ystar = record.best().to_vec();
        let gradient = if record.unique {
            Some(match self.dir {
                Direction::Plus => -self.kernel.eval(self.s, self.t, x, &ystar)?.grad_x,
                Direction::Minus => self.kernel.eval(self.s, self.t, &ystar, x)?.grad_y,
            })
        } else {
            None
        };
        let value = match self.dir {
            Direction::Plus => top,
            Direction::Minus => -top,
        };
        if self.dir == Direction::Minus {
            record.values.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(PointValue {
            value,
            record,
            gradient,
        })
    }

    fn polish(&self, x: &[f64], y: &[f64], radius: f64) -> Result<(Vec<f64>, f64)> {
        let grid = self.u.grid();
        let n = grid.dim();
        let mut failure = None;
        let mut f = |z: &[f64]| -> f64 {
            // Project into the ball and the neighbouring cells.
            let mut w: Vec<f64> = z.to_vec();
            for a in 0..n {
                let h = grid.spacing(a);
                w[a] = w[a].clamp(y[a] - h, y[a] + h);
            }
            let d: f64 = w.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            if d > radius && d > 0.0 {
                for a in 0..n {
                    w[a] = x[a] + (w[a] - x[a]) * radius / d;
                }
            }
            match self.objective(x, &w) {
                Ok(v) => -v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let (z, fz) = if n == 1 {
            let h = grid.spacing(0);
            let lo = (y[0] - h).max(x[0] - radius);
            let hi = (y[0] + h).min(x[0] + radius);
            let (z, fz) = brent_min(|s| f(&[s]), lo, hi, 1e-11 * (1.0 + y[0].abs()));
            (vec![z], fz)
        } else {
            let step = 0.5 * grid.max_spacing();
            nelder_mead(&mut f, y, step, 1e-10, 400)
        };
        if let Some(e) = failure {
            return Err(e);
        }
        // Return the projected point actually evaluated.
        let mut w = z.clone();
        for a in 0..n {
            let h = grid.spacing(a);
            w[a] = w[a].clamp(y[a] - h, y[a] + h);
        }
        let d: f64 = w.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if d > radius && d > 0.0 {
            for a in 0..n {
                w[a] = x[a] + (w[a] - x[a]) * radius / d;
            }
        }
        Ok((w, -fz))
    }
}

/// Targets whose localization ball fits in the box of `u`.
pub fn default_targets(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    kappa0: Option<f64>,
) -> Result<Grid> {
    let lip = u.lipschitz();
    let kappa = match kappa0 {
        Some(k) => k,
        None => u
            .grid()
            .nodes()
            .map(|x| kappa0_bound(kernel, lip, s, t, &x))
            .fold(0.0, f64::max),
    };
    let margin = kappa * (t - s);
    u.grid().interior(margin).ok_or_else(|| Error::SearchBallClipped {
        center: u.grid().lower.clone(),
        radius: margin,
    })
}

fn apply(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    dir: Direction,
    opts: &LaxOptions,
) -> Result<LaxOutput> {
    if !(s < t) {
        return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    let window = kernel.lagrangian().time_window();
    window.check(s)?;
    window.check(t)?;
    let targets = match &opts.targets {
        Some(g) => g.clone(),
        None => default_targets(u, kernel, s, t, opts.kappa0)?,
    };
    let search = Search {
        u,
        kernel,
        s,
        t,
        dir,
        opts,
        lip: u.lipschitz(),
    };
    let nodes: Vec<Vec<f64>> = targets.nodes().collect();
    let results: Vec<PointValue> = nodes
        .par_iter()
        .map(|x| search.at(x))
        .collect::<Result<Vec<_>>>()?;
    let kappa0 = results.iter().map(|r| r.record.kappa0).fold(0.0, f64::max);
    let values = results.iter().map(|r| r.value).collect();
    let (records, gradients) = results.into_iter().map(|r| (r.record, r.gradient)).unzip();
    Ok(LaxOutput {
        values: GridFunction::new(targets, values)?,
        records,
        gradients,
        kappa0,
    })
}

/// `T⁺_{s,t}u` on the target grid.
pub fn lax_plus(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    opts: &LaxOptions,
) -> Result<LaxOutput> {
    apply(u, kernel, s, t, Direction::Plus, opts)
}

/// `T⁻_{s,t}u` on the target grid.
pub fn lax_minus(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    opts: &LaxOptions,
) -> Result<LaxOutput> {
    apply(u, kernel, s, t, Direction::Minus, opts)
}

/// `T⁺_{s,t}u(x)` at a single point.
pub fn lax_plus_at(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    x: &[f64],
    opts: &LaxOptions,
) -> Result<PointValue> {
    if !(s < t) {
        return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    let search = Search {
        u,
        kernel,
        s,
        t,
        dir: Direction::Plus,
        opts,
        lip: u.lipschitz(),
    };
    search.at(x)
}

/// `T⁻_{s,t}u(x)` at a single point.
pub fn lax_minus_at(
    u: &GridFunction,
    kernel: &ActionKernel,
    s: f64,
    t: f64,
    x: &[f64],
    opts: &LaxOptions,
) -> Result<PointValue> {
    if !(s < t) {
        return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    let search = Search {
        u,
        kernel,
        s,
        t,
        dir: Direction::Minus,
        opts,
        lip: u.lipschitz(),
    };
    search.at(x)
}

/// Viscosity solution of the Cauchy problem at time `t`, by composing
/// `T⁻` over `n_steps` equal substeps starting from `u0` at `t0`.
///
/// On bounded boxes each substep loses a boundary layer of width `κ₀·Δt`.
pub fn solve_cauchy(
    u0: &GridFunction,
    kernel: &ActionKernel,
    t0: f64,
    t: f64,
    n_steps: usize,
    opts: &LaxOptions,
) -> Result<GridFunction> {
    if n_steps == 0 {
        return Err(Error::InvalidInput("n_steps must be at least 1".into()));
    }
    let dt = (t - t0) / n_steps as f64;
    let mut u = u0.clone();
    for k in 0..n_steps {
        let s = t0 + k as f64 * dt;
        let e = if k + 1 == n_steps { t } else { s + dt };
        let step_opts = LaxOptions {
            targets: None,
            ..opts.clone()
        };
        u = lax_minus(&u, kernel, s, e, &step_opts)?.values;
    }
    Ok(u)
}

/// Empirical localization constant `κ₀ = max |y_{t,x} − x|/(t − t₀)` over
/// sample points and a decreasing `t_grid`, for each rescaling `α·u`.
///
/// Records the constant per scale, checks that it does not grow as
/// `t → t₀⁺`, and checks every maximizer against the a-priori bound.
pub fn estimate_kappa0(
    u: &GridFunction,
    kernel: &ActionKernel,
    t0: f64,
    t_grid: &[f64],
    sample_points: &[Vec<f64>],
    scales: &[f64],
) -> ProbeReport {
    let mut report = ProbeReport::new("kappa0");
    let mut table = Table::new(["alpha", "lip", "t", "kappa0_empirical", "kappa0_bound"]);
    let opts = LaxOptions::default();
    for &alpha in scales {
        let ua = u.scaled(alpha);
        let lip = ua.lipschitz();
        let mut per_t = Vec::new();
        for &t in t_grid {
            let gap = t - t0;
            let mut emp = 0.0_f64;
            let mut bound = 0.0_f64;
            for x in sample_points {
                report.samples += 1;
                match lax_plus_at(&ua, kernel, t0, t, x, &opts) {
                    Ok(pv) => {
                        bound = bound.max(pv.record.kappa0);
                        for y in &pv.record.maximizers {
                            let d = y.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                            emp = emp.max(d / gap);
                            let slack = pv.record.kappa0 * gap * (1.0 + 1e-9) - d;
                            report.check(slack, || {
                                format!("maximizer {y:?} of {x:?} escapes the localization ball (t = {t})")
                            });
                        }
                    }
                    Err(e) => report.check(-1.0, || format!("alpha {alpha}, t {t}, x {x:?}: {e}")),
                }
            }
            table.push(vec![alpha, lip, t, emp, bound]);
            per_t.push(emp);
        }
        let kappa = per_t.iter().copied().fold(0.0, f64::max);
        if let (Some(first), Some(last)) = (per_t.first(), per_t.last()) {
            // t_grid decreases toward t0: the constant must not blow up.
            let slack = 1.1 * first.max(1e-12) - last;
            report.check(slack, || {
                format!("kappa0 grows from {first} to {last} as t decreases (alpha {alpha})")
            });
        }
        report.set(format!("kappa0(alpha={alpha})"), kappa);
        report.set(format!("lip(alpha={alpha})"), lip);
    }
    if let (Some(&a0), Some(&a1)) = (scales.first(), scales.last()) {
        if a1 != a0 {
            let k0 = report.constant(&format!("kappa0(alpha={a0})")).unwrap_or(0.0);
            let k1 = report.constant(&format!("kappa0(alpha={a1})")).unwrap_or(0.0);
            if k0 > 0.0 {
                report.set("scaling_ratio", (k1 / k0) / (a1 / a0));
            }
        }
    }
    report.tables.insert("by_t".into(), table);
    report
}
