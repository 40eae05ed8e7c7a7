//! Superdifferentials of semiconcave grid functions, singular sets, and the
//! minimizer of a convex Hamiltonian over `D⁺u(x)`.
//!
//! A node is classified differentiable when a local quadratic fit (five
//! points per axis in 1D, the full `3ⁿ` stencil otherwise) leaves a residual
//! below `10h²` and its one-sided slopes differ by less than `5h` on every
//! axis. Limiting gradients at `x` are the clustered fit gradients of nearby
//! differentiable nodes, and `D⁺u(x)` is their convex hull.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::lagrangian::{Hamiltonian, Point};
use crate::search::brent_min;

/// Thresholds for classification and clustering, in units of the spacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// Quadratic-fit residual bound, times `h²`.
    pub fit: f64,
    /// One-sided slope spread bound, times `h`.
    pub spread: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            fit: 10.0,
            spread: 5.0,
        }
    }
}

/// Local differentiability diagnosis of one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeClass {
    pub differentiable: bool,
    /// Gradient of the local quadratic fit.
    pub gradient: Vec<f64>,
    pub fit_residual: f64,
    /// Largest one-sided slope gap over the axes.
    pub spread: f64,
}

/// Stencil offsets and the least-squares operator of the local quadratic fit.
struct Fitter {
    offsets: Vec<Vec<i64>>,
    design: DMatrix<f64>,
    pinv: DMatrix<f64>,
    spacing: Vec<f64>,
}

impl Fitter {
    fn new(grid: &Grid) -> Self {
        let n = grid.dim();
        let spacing: Vec<f64> = (0..n).map(|a| grid.spacing(a)).collect();
        let offsets: Vec<Vec<i64>> = if n == 1 {
            (-2..=2).map(|i| vec![i]).collect()
        } else {
            let mut out = Vec::new();
            let mut idx = vec![-1i64; n];
            'outer: loop {
                out.push(idx.clone());
                for a in (0..n).rev() {
                    idx[a] += 1;
                    if idx[a] <= 1 {
                        continue 'outer;
                    }
                    idx[a] = -1;
                }
                break;
            }
            out
        };
        // Monomials: 1, z_a, z_a z_b (a ≤ b) in physical units.
        let params = 1 + n + n * (n + 1) / 2;
        let mut design = DMatrix::zeros(offsets.len(), params);
        for (r, off) in offsets.iter().enumerate() {
            let z: Vec<f64> = off.iter().zip(&spacing).map(|(o, h)| *o as f64 * h).collect();
            design[(r, 0)] = 1.0;
            let mut c = 1;
            for a in 0..n {
                design[(r, c)] = z[a];
                c += 1;
            }
            for a in 0..n {
                for b in a..n {
                    design[(r, c)] = z[a] * z[b];
                    c += 1;
                }
            }
        }
        let pinv = design
            .clone()
            .pseudo_inverse(1e-14)
            .expect("stencil design matrix has a pseudo-inverse");
        Self {
            offsets,
            design,
            pinv,
            spacing,
        }
    }

    fn classify(&self, u: &GridFunction, k: usize, th: &Thresholds) -> Option<NodeClass> {
        let grid = u.grid();
        let n = grid.dim();
        let base: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
        let mut vals = DVector::zeros(self.offsets.len());
        let mut idx = vec![0i64; n];
        for (r, off) in self.offsets.iter().enumerate() {
            for a in 0..n {
                idx[a] = base[a] + off[a];
            }
            vals[r] = u.values()[grid.resolve(&idx)?];
        }
        let coef = &self.pinv * &vals;
        let resid = &vals - &self.design * &coef;
        let fit_residual = resid.amax();
        let gradient: Vec<f64> = (0..n).map(|a| coef[1 + a]).collect();
        let (minus, plus) = one_sided(u, k)?;
        let spread = minus
            .iter()
            .zip(&plus)
            .map(|(l, r)| (r - l).abs())
            .fold(0.0, f64::max);
        let h = self.spacing.iter().copied().fold(0.0, f64::max);
        let spread_ok = minus
            .iter()
            .zip(&plus)
            .zip(&self.spacing)
            .all(|((l, r), h)| (r - l).abs() < th.spread * h);
        Some(NodeClass {
            differentiable: fit_residual < th.fit * h * h && spread_ok,
            gradient,
            fit_residual,
            spread,
        })
    }
}

/// One-sided difference quotients at node `k` along each axis; `None` on
/// non-periodic boundary nodes.
pub(crate) fn one_sided(u: &GridFunction, k: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let grid = u.grid();
    let n = grid.dim();
    let idx: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
    let mut minus = vec![0.0; n];
    let mut plus = vec![0.0; n];
    let uk = u.values()[k];
    for a in 0..n {
        let h = grid.spacing(a);
        let mut j = idx.clone();
        j[a] -= 1;
        let left = grid.resolve(&j)?;
        j[a] += 2;
        let right = grid.resolve(&j)?;
        minus[a] = (uk - u.values()[left]) / h;
        plus[a] = (u.values()[right] - uk) / h;
    }
    Some((minus, plus))
}

/// Differentiability diagnosis of node `k`; `None` when the stencil leaves a
/// non-periodic box.
pub fn classify_node(u: &GridFunction, k: usize) -> Option<NodeClass> {
    Fitter::new(u.grid()).classify(u, k, &Thresholds::default())
}

/// Diagnoses every node.
pub fn classify_all(u: &GridFunction, th: &Thresholds) -> Vec<Option<NodeClass>> {
    let fitter = Fitter::new(u.grid());
    (0..u.grid().len())
        .into_par_iter()
        .map(|k| fitter.classify(u, k, th))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Offsets (as node coordinates, possibly unwrapped) of nodes within `radius` of `x`.
fn nodes_near(grid: &Grid, x: &[f64], radius: f64) -> Vec<(usize, Vec<f64>)> {
    let n = grid.dim();
    let ranges: Vec<(i64, i64)> = (0..n)
        .map(|a| {
            let h = grid.spacing(a);
            (
                ((x[a] - radius - grid.lower[a]) / h - 1e-9).ceil() as i64,
                ((x[a] + radius - grid.lower[a]) / h + 1e-9).floor() as i64,
            )
        })
        .collect();
    if ranges.iter().any(|(lo, hi)| lo > hi) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    'outer: loop {
        let y: Vec<f64> = (0..n).map(|a| grid.coord(a, idx[a])).collect();
        if dist(&y, x) <= radius * (1.0 + 1e-12) {
            if let Some(k) = grid.resolve(&idx) {
                out.push((k, y));
            }
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
    out
}

/// Single-linkage clusters of `points` at distance `tol`, as index lists
/// ordered by their first member.
fn single_linkage(points: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let m = points.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..m {
        for j in i + 1..m {
            if dist(&points[i], &points[j]) <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..m {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, g)) => g.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Representative of one cluster: the value at `x` of an affine fit of the
/// gradient against position when the members span, else the mean.
fn cluster_center(x: &[f64], positions: &[&Vec<f64>], grads: &[&Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let m = positions.len();
    let all: Vec<usize> = (0..m).collect();
    if m < n + 2 {
        return mean_of(grads, &all);
    }
    // Stencils that graze a kink pass the differentiability test with a
    // polluted gradient, and they sit next to x. Seed the affine model with the
    // far half of the cluster, then alternate between fitting and keeping the
    // members whose residual is near the median.
    let mut by_distance = all.clone();
    by_distance.sort_by(|&i, &j| dist(positions[j], x).total_cmp(&dist(positions[i], x)));
    let mut keep: Vec<usize> = by_distance[..(n + 2).max(m.div_ceil(2))].to_vec();
    keep.sort_unstable();
    let scale = grads.iter().flat_map(|g| g.iter()).fold(1.0_f64, |s, c| s.max(c.abs()));
    let mut center = None;
    for _ in 0..10 {
        let Some((c, resid)) = affine_fit(x, positions, grads, &keep) else {
            break;
        };
        center = Some(c);
        let mut sorted = resid.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = 4.0 * sorted[m / 2] + 1e-10 * scale;
        let next: Vec<usize> = all.iter().copied().filter(|&i| resid[i] <= cut).collect();
        if next == keep || next.len() < n + 2 {
            break;
        }
        keep = next;
    }
    center
        .or_else(|| affine_fit(x, positions, grads, &all).map(|(c, _)| c))
        .unwrap_or_else(|| mean_of(grads, &all))
}

fn mean_of(grads: &[&Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let n = grads[0].len();
    (0..n)
        .map(|a| idx.iter().map(|&i| grads[i][a]).sum::<f64>() / idx.len() as f64)
        .collect()
}

/// Affine model of the gradient field over the members `idx`, evaluated at
/// `x`, together with each member's residual norm (indexed like `grads`).
fn affine_fit(
    x: &[f64],
    positions: &[&Vec<f64>],
    grads: &[&Vec<f64>],
    idx: &[usize],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let m = idx.len();
    if m < n + 2 {
        return None;
    }
    let mut design = DMatrix::zeros(m, n + 1);
    for (r, &i) in idx.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for a in 0..n {
            design[(r, 1 + a)] = positions[i][a] - x[a];
        }
    }
    let svd = design.svd(true, true);
    if svd.singular_values.min() <= 1e-9 * svd.singular_values.max() {
        return None;
    }
    let mut center = vec![0.0; n];
    let mut resid = vec![0.0; grads.len()];
    for a in 0..n {
        let rhs = DVector::from_iterator(m, idx.iter().map(|&i| grads[i][a]));
        let c = svd.solve(&rhs, 1e-14).ok()?;
        center[a] = c[0];
        for (k, p) in positions.iter().enumerate() {
            let model = c[0] + (0..n).map(|b| c[1 + b] * (p[b] - x[b])).sum::<f64>();
            resid[k] += (grads[k][a] - model).powi(2);
        }
    }
    Some((center, resid.into_iter().map(f64::sqrt).collect()))
}

/// Default search radius: five spacings.
pub fn default_radius(u: &GridFunction) -> f64 {
    5.0 * u.grid().max_spacing()
}

/// Default clustering tolerance: ten spacings.
pub fn default_cluster_tol(u: &GridFunction) -> f64 {
    10.0 * u.grid().max_spacing()
}

/// Representatives of `D*u(x)`.
///
/// When `x` is itself a differentiable node only the cluster containing its
/// own gradient is returned.
pub fn limiting_differentials(
    u: &GridFunction,
    x: &[f64],
    radius: f64,
    cluster_tol: f64,
) -> Result<Vec<Point>> {
    let fitter = Fitter::new(u.grid());
    limiting_with(u, &fitter, x, radius, cluster_tol, &Thresholds::default())
}

fn limiting_with(
    u: &GridFunction,
    fitter: &Fitter,
    x: &[f64],
    radius: f64,
    cluster_tol: f64,
    th: &Thresholds,
) -> Result<Vec<Point>> {
    let grid = u.grid();
    let n = grid.dim();
    if x.len() != n {
        return Err(Error::InvalidInput("point dimension differs from grid".into()));
    }
    if radius < 2.0 * grid.max_spacing() * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "radius {radius} is below twice the spacing {}",
            grid.max_spacing()
        )));
    }
    let mut positions = Vec::new();
    let mut grads = Vec::new();
    let mut own = None;
    for (k, y) in nodes_near(grid, x, radius) {
        if let Some(c) = fitter.classify(u, k, th) {
            if c.differentiable {
                if dist(&y, x) <= 1e-12 * (1.0 + grid.max_spacing()) {
                    own = Some(positions.len());
                }
                positions.push(y);
                grads.push(c.gradient);
            }
        }
    }
    if positions.len() < n + 1 {
        return Err(Error::InsufficientSamples {
            found: positions.len(),
            needed: n + 1,
        });
    }
    let clusters = single_linkage(&grads, cluster_tol);
    let chosen: Vec<&Vec<usize>> = match own {
        Some(i) => clusters.iter().filter(|c| c.contains(&i)).collect(),
        None => clusters.iter().collect(),
    };
    Ok(chosen
        .into_iter()
        .map(|members| {
            let ps: Vec<&Vec<f64>> = members.iter().map(|&i| &positions[i]).collect();
            let gs: Vec<&Vec<f64>> = members.iter().map(|&i| &grads[i]).collect();
            Point::from_vec(cluster_center(x, &ps, &gs))
        })
        .collect())
}

/// `D⁺u(x)` as the convex hull of the limiting gradients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuperdiffSet {
    pub x: Vec<f64>,
    pub limiting: Vec<Vec<f64>>,
    /// Hull vertices (in 2D, counter-clockwise).
    pub vertices: Vec<Vec<f64>>,
    pub diameter: f64,
}

impl SuperdiffSet {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_singleton(&self, tol: f64) -> bool {
        self.diameter <= tol
    }

    /// Whether `p` lies in the hull up to `tol`.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        hull_distance(&self.vertices, p) <= tol
    }

    /// Whether every limiting gradient lies on the hull boundary (within `tol`).
    pub fn limiting_on_boundary(&self, tol: f64) -> bool {
        self.limiting.iter().all(|p| on_boundary(&self.vertices, p, tol))
    }

    /// Hull scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let sc = |v: &Vec<Vec<f64>>| v.iter().map(|p| p.iter().map(|c| alpha * c).collect()).collect();
        Self {
            x: self.x.clone(),
            limiting: sc(&self.limiting),
            vertices: sc(&self.vertices),
            diameter: alpha.abs() * self.diameter,
        }
    }
}

/// Convex hull vertices: the interval ends in 1D, the counter-clockwise
/// monotone chain in 2D, and points on supporting facets otherwise.
pub fn convex_hull(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let n = points[0].len();
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0_f64, |s, c| s.max(c.abs()));
    let eps = 1e-12 * scale;
    let mut uniq: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !uniq.iter().any(|q| dist(p, q) <= eps) {
            uniq.push(p.clone());
        }
    }
    if uniq.len() <= 1 {
        return uniq;
    }
    match n {
        1 => {
            let lo = uniq.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = uniq.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            vec![vec![lo], vec![hi]]
        }
        2 => {
            let mut pts = uniq;
            pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
            let cross = |o: &Vec<f64>, a: &Vec<f64>, b: &Vec<f64>| {
                (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
            };
            let tol = eps * scale;
            let mut lower: Vec<Vec<f64>> = Vec::new();
            for p in &pts {
                while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= tol {
                    lower.pop();
                }
                lower.push(p.clone());
            }
            let mut upper: Vec<Vec<f64>> = Vec::new();
            for p in pts.iter().rev() {
                while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= tol {
                    upper.pop();
                }
                upper.push(p.clone());
            }
            lower.pop();
            upper.pop();
            lower.extend(upper);
            lower
        }
        _ => hull_by_facets(&uniq, eps),
    }
}

fn hull_by_facets(pts: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let n = pts[0].len();
    let m = pts.len();
    if m <= n {
        return pts.to_vec();
    }
    let mut is_vertex = vec![false; m];
    // Enumerate n-subsets; each affinely independent one spans a hyperplane.
    let mut comb: Vec<usize> = (0..n).collect();
    loop {
        let base = &pts[comb[0]];
        // Square with a zero row so the SVD exposes the normal direction.
        let mut rows = DMatrix::zeros(n, n);
        for (r, &i) in comb[1..].iter().enumerate() {
            for a in 0..n {
                rows[(r, a)] = pts[i][a] - base[a];
            }
        }
        let svd = rows.svd(false, true);
        if let Some(vt) = svd.v_t {
            if svd.singular_values.iter().filter(|s| **s > eps).count() == n - 1 {
                let kmin = svd.singular_values.imin();
                let normal: Vec<f64> = (0..n).map(|a| vt[(kmin, a)]).collect();
                let side = |p: &Vec<f64>| (0..n).map(|a| normal[a] * (p[a] - base[a])).sum::<f64>();
                let (mut pos, mut neg) = (false, false);
                for p in pts {
                    let s = side(p);
                    pos |= s > eps;
                    neg |= s < -eps;
                }
                if !(pos && neg) {
                    for (k, p) in pts.iter().enumerate() {
                        if side(p).abs() <= eps {
                            is_vertex[k] = true;
                        }
                    }
                }
            }
        }
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return extreme_points(pts, &is_vertex);
            }
            i -= 1;
            if comb[i] < m - n + i {
                comb[i] += 1;
                for j in i + 1..n {
                    comb[j] = comb[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Drops facet points that are convex combinations of the others.
fn extreme_points(pts: &[Vec<f64>], candidate: &[bool]) -> Vec<Vec<f64>> {
    let cands: Vec<&Vec<f64>> = pts.iter().zip(candidate).filter(|(_, c)| **c).map(|(p, _)| p).collect();
    cands
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let others: Vec<Vec<f64>> = cands
                .iter()
                .enumerate()
                .filter(|(j, _)| j != i)
                .map(|(_, q)| (*q).clone())
                .collect();
            others.is_empty() || hull_distance(&others, p) > 1e-10
        })
        .map(|(_, p)| (*p).clone())
        .collect()
}

/// Euclidean distance from `p` to the convex hull of `verts`.
///
/// Exact in one and two dimensions; higher dimensions use projected gradient
/// on the simplex weights.
pub fn hull_distance(verts: &[Vec<f64>], p: &[f64]) -> f64 {
    if verts.is_empty() {
        return f64::INFINITY;
    }
    let n = p.len();
    match n {
        1 => {
            let lo = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            let hi = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            return (lo - p[0]).max(p[0] - hi).max(0.0);
        }
        2 => return polygon_distance(&convex_hull(verts), p),
        _ => {}
    }
    let m = verts.len();
    let combo = |w: &[f64]| -> Vec<f64> {
        (0..n).map(|a| (0..m).map(|i| w[i] * verts[i][a]).sum()).collect()
    };
    let mut w = vec![1.0 / m as f64; m];
    // Lipschitz constant of the gradient: largest eigenvalue of V Vᵀ ≤ trace.
    let lip: f64 = verts.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>()).sum::<f64>().max(1e-300);
    for _ in 0..5000 {
        let q = combo(&w);
        let r: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        let g: Vec<f64> = verts.iter().map(|v| v.iter().zip(&r).map(|(a, b)| a * b).sum()).collect();
        let next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - gi / lip).collect();
        let next = project_simplex(&next);
        let change = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if change <= 1e-15 {
            break;
        }
    }
    dist(&combo(&w), p)
}

fn segment_distance(a: &[f64], b: &[f64], p: &[f64]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - s * d[0]).hypot(p[1] - a[1] - s * d[1])
}

/// Distance to a counter-clockwise convex polygon (possibly a point or segment).
fn polygon_distance(hull: &[Vec<f64>], p: &[f64]) -> f64 {
    let m = hull.len();
    if m == 1 {
        return dist(&hull[0], p);
    }
    let edge = |i: usize| (&hull[i], &hull[(i + 1) % m]);
    if m >= 3 {
        let inside = (0..m).all(|i| {
            let (a, b) = edge(i);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        });
        if inside {
            return 0.0;
        }
    }
    (0..m)
        .map(|i| {
            let (a, b) = edge(i);
            segment_distance(a, b, p)
        })
        .fold(f64::INFINITY, f64::min)
}

fn on_boundary(verts: &[Vec<f64>], p: &[f64], tol: f64) -> bool {
    let n = p.len();
    if verts.len() <= n {
        // Degenerate hull: every point is on its relative boundary.
        return hull_distance(verts, p) <= tol;
    }
    // A point is on the boundary iff some small push leaves the hull.
    let step = 10.0 * tol.max(1e-12);
    for a in 0..n {
        for s in [-1.0, 1.0] {
            let mut q = p.to_vec();
            q[a] += s * step;
            if hull_distance(verts, &q) > 0.5 * step {
                return hull_distance(verts, p) <= tol;
            }
        }
    }
    if n == 2 {
        for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let q = [p[0] + a * step, p[1] + b * step];
            if hull_distance(verts, &q) > 0.25 * step {
                return hull_distance(verts, p) <= tol;
            }
        }
    }
    false
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut s = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// `D⁺u(x)` from the limiting gradients within `radius`.
pub fn superdifferential(u: &GridFunction, x: &[f64], radius: f64, cluster_tol: f64) -> Result<SuperdiffSet> {
    let fitter = Fitter::new(u.grid());
    superdiff_with(u, &fitter, x, radius, cluster_tol, &Thresholds::default())
}

fn superdiff_with(
    u: &GridFunction,
    fitter: &Fitter,
    x: &[f64],
    radius: f64,
    cluster_tol: f64,
    th: &Thresholds,
) -> Result<SuperdiffSet> {
    let limiting: Vec<Vec<f64>> = limiting_with(u, fitter, x, radius, cluster_tol, th)?
        .into_iter()
        .map(|p| p.as_slice().to_vec())
        .collect();
    let vertices = convex_hull(&limiting);
    let mut diameter: f64 = 0.0;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            diameter = diameter.max(dist(a, b));
        }
    }
    Ok(SuperdiffSet {
        x: x.to_vec(),
        limiting,
        vertices,
        diameter,
    })
}

/// As [`superdifferential`], after checking that midpoint defects around `x`
/// stay below the declared semiconcavity constant.
pub fn superdifferential_checked(
    u: &GridFunction,
    x: &[f64],
    radius: f64,
    cluster_tol: f64,
    semiconcavity_bound: f64,
) -> Result<SuperdiffSet> {
    let grid = u.grid();
    let mut worst = f64::NEG_INFINITY;
    for (k, _) in nodes_near(grid, x, radius) {
        let base: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
        for a in 0..grid.dim() {
            if let Some(r) = midpoint_ratio(u, &base, &unit(grid.dim(), a)) {
                worst = worst.max(r);
            }
        }
    }
    if worst > semiconcavity_bound {
        return Err(Error::NotSemiconcave {
            ratio: worst,
            bound: semiconcavity_bound,
        });
    }
    superdifferential(u, x, radius, cluster_tol)
}

fn unit(n: usize, a: usize) -> Vec<i64> {
    let mut e = vec![0; n];
    e[a] = 1;
    e
}

/// `(u(x+z) + u(x−z) − 2u(x))/|z|²` for the lattice step `z`.
fn midpoint_ratio(u: &GridFunction, base: &[i64], step: &[i64]) -> Option<f64> {
    let grid = u.grid();
    let n = grid.dim();
    let plus: Vec<i64> = (0..n).map(|a| base[a] + step[a]).collect();
    let minus: Vec<i64> = (0..n).map(|a| base[a] - step[a]).collect();
    let up = u.values()[grid.resolve(&plus)?];
    let um = u.values()[grid.resolve(&minus)?];
    let u0 = u.values()[grid.resolve(base)?];
    let z2: f64 = (0..n).map(|a| (step[a] as f64 * grid.spacing(a)).powi(2)).sum();
    Some((up + um - 2.0 * u0) / z2)
}

/// Minimizer of `H(t, x, ·)` over a superdifferential.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QMinimum {
    pub q: Vec<f64>,
    pub value: f64,
    /// Frank-Wolfe duality gap `max_i ⟨∇H(q), q − vᵢ⟩` at the returned point.
    pub fw_gap: f64,
    pub iterations: usize,
}

/// The unique minimizer `q` of the strictly convex `H(t, x, ·)` over `S`.
///
/// The interval case uses Brent's method; polytopes use projected gradient on
/// the simplex weights of the vertices with Frank-Wolfe as a fallback, and the
/// Frank-Wolfe gap certifies the result.
pub fn min_h_over_superdiff(h: &dyn Hamiltonian, t: f64, x: &[f64], s: &SuperdiffSet) -> Result<QMinimum> {
    let verts = &s.vertices;
    if verts.is_empty() {
        return Err(Error::InvalidInput("empty superdifferential".into()));
    }
    let n = verts[0].len();
    let value = |q: &[f64]| h.value(t, x, q);
    let gap_at = |q: &[f64]| -> f64 {
        let g = h.grad_p_vec(t, x, q);
        verts
            .iter()
            .map(|v| (0..n).map(|a| g[a] * (q[a] - v[a])).sum::<f64>())
            .fold(0.0, f64::max)
    };
    if verts.len() == 1 {
        let q = verts[0].clone();
        return Ok(QMinimum {
            value: value(&q),
            fw_gap: 0.0,
            iterations: 0,
            q,
        });
    }
    if n == 1 {
        let (a, b) = (verts[0][0], verts[1][0]);
        let (lo, hi) = (a.min(b), a.max(b));
        let (mut q, mut fq) = brent_min(|p| value(&[p]), lo, hi, 1e-14 * (1.0 + hi.abs().max(lo.abs())));
        for e in [lo, hi] {
            let fe = value(&[e]);
            if fe <= fq {
                q = e;
                fq = fe;
            }
        }
        return Ok(QMinimum {
            fw_gap: gap_at(&[q]),
            q: vec![q],
            value: fq,
            iterations: 1,
        });
    }
    let m = verts.len();
    let combo = |w: &[f64]| -> Vec<f64> { (0..n).map(|a| (0..m).map(|i| w[i] * verts[i][a]).sum()).collect() };
    let mut w = vec![1.0 / m as f64; m];
    let mut f = value(&combo(&w));
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 20_000 {
        iterations += 1;
        let q = combo(&w);
        let gp = h.grad_p_vec(t, x, &q);
        let gw: Vec<f64> = verts.iter().map(|v| (0..n).map(|a| v[a] * gp[a]).sum()).collect();
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project_simplex(&w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>());
            let ft = value(&combo(&trial));
            let decrease: f64 = gw.iter().zip(&trial).zip(&w).map(|((g, a), b)| g * (a - b)).sum::<f64>()
                + trial.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * step);
            if ft <= f + decrease + 1e-15 * f.abs().max(1.0) {
                let change = trial.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                w = trial;
                f = ft;
                accepted = true;
                step *= 2.0;
                if change <= 1e-15 {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    let mut q = combo(&w);
    let scale = 1.0 + f.abs();
    if !converged || gap_at(&q) > 1e-10 * scale {
        // Frank-Wolfe with exact line search from the current point.
        for _ in 0..20_000 {
            iterations += 1;
            let g = h.grad_p_vec(t, x, &q);
            let (best, _) = verts
                .iter()
                .enumerate()
                .map(|(i, v)| (i, (0..n).map(|a| g[a] * v[a]).sum::<f64>()))
                .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
            let target = &verts[best];
            let seg = |s: f64| -> Vec<f64> { (0..n).map(|a| q[a] + s * (target[a] - q[a])).collect() };
            let (s, _) = brent_min(|s| value(&seg(s)), 0.0, 1.0, 1e-14);
            q = seg(s);
            if gap_at(&q) <= 1e-10 * scale {
                break;
            }
        }
        f = value(&q);
    }
    let fw_gap = gap_at(&q);
    if !(fw_gap <= 1e-8 * scale) {
        return Err(Error::NonConvergence {
            iterations,
            residual: fw_gap,
        });
    }
    Ok(QMinimum {
        q,
        value: f,
        fw_gap,
        iterations,
    })
}

/// Singular nodes: non-differentiable nodes whose superdifferential diameter
/// exceeds `diam_threshold`, with the default radius and clustering tolerance.
pub fn singular_set(u: &GridFunction, diam_threshold: f64) -> Vec<usize> {
    let fitter = Fitter::new(u.grid());
    let th = Thresholds::default();
    let radius = default_radius(u);
    let tol = default_cluster_tol(u);
    let grid = u.grid();
    (0..grid.len())
        .into_par_iter()
        .filter(|&k| {
            if matches!(fitter.classify(u, k, &th), Some(c) if c.differentiable) {
                return false;
            }
            let x = grid.node(k);
            matches!(superdiff_with(u, &fitter, &x, radius, tol, &th), Ok(s) if s.diameter > diam_threshold)
        })
        .collect()
}

/// Whether `x` (any point, not necessarily a node) is singular at the given
/// diameter threshold, and the diameter found.
pub fn is_singular(u: &GridFunction, x: &[f64], diam_threshold: f64) -> Result<(bool, SuperdiffSet)> {
    let s = superdifferential(u, x, default_radius(u), default_cluster_tol(u))?;
    Ok((s.diameter > diam_threshold, s))
}

/// Axis-aligned sampling region.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn whole(grid: &Grid) -> Self {
        Self::new(grid.lower.clone(), grid.upper.clone())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Largest midpoint-defect ratio over a region, with samples crossing
/// singular nodes reported separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemiconcavityEstimate {
    /// `max(0, max ratio)` over unmasked samples.
    pub constant: f64,
    pub samples: usize,
    pub masked: usize,
    /// Largest `|ratio|` among masked samples.
    pub masked_extreme: f64,
    pub singular_nodes: Vec<usize>,
}

/// `C₂ = max (u(x+z) + u(x−z) − 2u(x))/|z|²` over nodes in `region` and
/// lattice steps `z` of one to three spacings along each axis (and the
/// diagonals in 2D), skipping segments that cross a singular node.
pub fn semiconcavity_constant(u: &GridFunction, region: &Region) -> SemiconcavityEstimate {
    let singular = singular_set(u, 4.0 * u.grid().max_spacing());
    semiconcavity_constant_masked(u, region, &singular)
}

pub fn semiconcavity_constant_masked(u: &GridFunction, region: &Region, singular: &[usize]) -> SemiconcavityEstimate {
    let grid = u.grid();
    let n = grid.dim();
    let mut steps: Vec<Vec<i64>> = Vec::new();
    for k in 1..=3 {
        for a in 0..n {
            let mut e = vec![0; n];
            e[a] = k;
            steps.push(e);
        }
    }
    if n == 2 {
        steps.push(vec![1, 1]);
        steps.push(vec![1, -1]);
    }
    let is_sing = {
        let mut v = vec![false; grid.len()];
        for &k in singular {
            v[k] = true;
        }
        v
    };
    let mut est = SemiconcavityEstimate {
        constant: 0.0,
        samples: 0,
        masked: 0,
        masked_extreme: 0.0,
        singular_nodes: singular.to_vec(),
    };
    for k in 0..grid.len() {
        if !region.contains(&grid.node(k)) {
            continue;
        }
        let base: Vec<i64> = grid.multi_index(k).iter().map(|&i| i as i64).collect();
        for step in &steps {
            let Some(r) = midpoint_ratio(u, &base, step) else { continue };
            let reach = step.iter().map(|s| s.abs()).max().unwrap_or(1);
            let crosses = (-reach..=reach).any(|j| {
                let idx: Vec<i64> = (0..n).map(|a| base[a] + j * step[a] / reach).collect();
                grid.resolve(&idx).is_some_and(|m| is_sing[m])
            });
            if crosses {
                est.masked += 1;
                est.masked_extreme = est.masked_extreme.max(r.abs());
            } else {
                est.samples += 1;
                est.constant = est.constant.max(r);
            }
        }
    }
    est
}
