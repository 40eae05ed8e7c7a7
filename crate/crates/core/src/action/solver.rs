use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    dual_arc, hermite_basis, hermite_basis_d1, hermite_basis_d2, Curve, FundamentalSolution,
};
use crate::error::{Error, Result};
use crate::lagrangian::{Point, TonelliLagrangian};
use crate::search::lbfgs;

/// Knobs of the two-phase action minimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub n_segments: usize,
    /// Euler-Lagrange residual tolerance (scaled by the force magnitude when
    /// that exceeds one).
    pub tol: f64,
    pub max_descent_iters: usize,
    pub max_newton_iters: usize,
    /// Number of bent starts added for multi-well Lagrangians.
    pub bent_starts: usize,
    /// Bent starts are used only when `t − s` exceeds this gap.
    pub multistart_gap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_segments: 16,
            tol: 1e-8,
            max_descent_iters: 400,
            max_newton_iters: 40,
            bent_starts: 4,
            multistart_gap: 0.5,
        }
    }
}

/// `A_{s,t}(x, y)` with `n_segments` Hermite segments and residual tolerance `tol`.
pub fn minimize_action(
    l: &dyn TonelliLagrangian,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    n_segments: usize,
    tol: f64,
) -> Result<FundamentalSolution> {
    let opts = SolverOptions {
        n_segments,
        tol,
        ..SolverOptions::default()
    };
    minimize_action_with(l, s, t, x, y, &opts)
}

/// `A_{s,t}(x, y)` with explicit solver options.
pub fn minimize_action_with(
    l: &dyn TonelliLagrangian,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    opts: &SolverOptions,
) -> Result<FundamentalSolution> {
    let n = l.dim();
    if x.len() != n || y.len() != n {
        return Err(Error::InvalidInput(format!(
            "endpoints must have dimension {n}"
        )));
    }
    if opts.n_segments < 2 {
        return Err(Error::InvalidInput("n_segments must be at least 2".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    if !(s < t) || !s.is_finite() || !t.is_finite() {
        return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    let window = l.time_window();
    window.check(s)?;
    window.check(t)?;

    let problem = Problem::new(l, s, t, x, y, opts.n_segments);
    let mut starts = vec![problem.straight_line()];
    if l.has_multiple_wells() && t - s > opts.multistart_gap {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a11c);
        for _ in 0..opts.bent_starts {
            starts.push(problem.bent_line(&mut rng));
        }
    }

    let mut best: Vec<FundamentalSolution> = Vec::new();
    let mut first_err = None;
    for start in starts {
        match problem.solve_from(start, opts) {
            Ok(fs) => best.push(fs),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if best.is_empty() {
        return Err(first_err.expect("at least one start"));
    }
    let vmin = best.iter().map(|f| f.value).fold(f64::INFINITY, f64::min);
    let slack = opts.tol * vmin.abs().max(1.0);
    let mid = 0.5 * (s + t);
    let chosen = best
        .into_iter()
        .filter(|f| f.value <= vmin + slack)
        .map(|f| (f.minimizer.position(mid), f))
        .min_by(|(a, _), (b, _)| lexicographic(a.as_slice(), b.as_slice()))
        .map(|(_, f)| f)
        .expect("nonempty");
    Ok(chosen)
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        match p.total_cmp(q) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

const GAUSS3_NODES: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
const GAUSS2_NODES: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

struct Problem<'a> {
    l: &'a dyn TonelliLagrangian,
    n: usize,
    nseg: usize,
    s: f64,
    h: f64,
    x: &'a [f64],
    y: &'a [f64],
}

/// Node positions (flattened, `nseg + 1` nodes).
type Nodes = Vec<f64>;

impl<'a> Problem<'a> {
    fn new(
        l: &'a dyn TonelliLagrangian,
        s: f64,
        t: f64,
        x: &'a [f64],
        y: &'a [f64],
        nseg: usize,
    ) -> Self {
        Self {
            l,
            n: l.dim(),
            nseg,
            s,
            h: (t - s) / nseg as f64,
            x,
            y,
        }
    }

    fn straight_line(&self) -> Nodes {
        let mut out = Vec::with_capacity((self.nseg + 1) * self.n);
        for i in 0..=self.nseg {
            let a = i as f64 / self.nseg as f64;
            out.extend(self.x.iter().zip(self.y).map(|(p, q)| p + a * (q - p)));
        }
        out
    }

    fn bent_line<R: Rng>(&self, rng: &mut R) -> Nodes {
        let n = self.n;
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|d| *d /= norm);
        let dist: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(p, q)| (q - p) * (q - p))
            .sum::<f64>()
            .sqrt();
        let amp = rng.gen_range(0.5..2.0) * (1.0 + dist);
        let mut out = self.straight_line();
        for i in 1..self.nseg {
            let bump = amp * (std::f64::consts::PI * i as f64 / self.nseg as f64).sin();
            for d in 0..n {
                out[i * n + d] += bump * dir[d];
            }
        }
        out
    }

    fn tau(&self, k: usize, sigma: f64) -> f64 {
        self.s + (k as f64 + sigma) * self.h
    }

    /// Discrete action of the piecewise linear curve through `interior`, and its gradient.
    fn linear_action(&self, interior: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n;
        let nseg = self.nseg;
        let node = |i: usize| -> &[f64] {
            if i == 0 {
                self.x
            } else if i == nseg {
                self.y
            } else {
                &interior[(i - 1) * n..i * n]
            }
        };
        grad.fill(0.0);
        let mut q = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut lx = vec![0.0; n];
        let mut lv = vec![0.0; n];
        let mut total = 0.0;
        for k in 0..nseg {
            let (a, b) = (node(k), node(k + 1));
            for d in 0..n {
                v[d] = (b[d] - a[d]) / self.h;
            }
            for (sig, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
                for d in 0..n {
                    q[d] = a[d] + sig * (b[d] - a[d]);
                }
                let tau = self.tau(k, *sig);
                total += self.h * w * self.l.value(tau, &q, &v);
                self.l.grad_x(tau, &q, &v, &mut lx);
                self.l.grad_v(tau, &q, &v, &mut lv);
                for d in 0..n {
                    if k >= 1 {
                        grad[(k - 1) * n + d] += w * (self.h * (1.0 - sig) * lx[d] - lv[d]);
                    }
                    if k + 1 < nseg {
                        grad[k * n + d] += w * (self.h * sig * lx[d] + lv[d]);
                    }
                }
            }
        }
        total
    }

    fn descend(&self, nodes: &mut Nodes, gtol_rel: f64, max_iter: usize) {
        let n = self.n;
        let mut interior = nodes[n..self.nseg * n].to_vec();
        let mut g0 = vec![0.0; interior.len()];
        self.linear_action(&interior, &mut g0);
        let g0max = g0.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let gtol = gtol_rel * (1.0 + g0max);
        lbfgs(
            |z, g| self.linear_action(z, g),
            &mut interior,
            gtol,
            max_iter,
            0.5 * self.h,
        );
        nodes[n..self.nseg * n].copy_from_slice(&interior);
    }

    fn initial_velocities(&self, nodes: &Nodes) -> Vec<f64> {
        let n = self.n;
        let times: Vec<f64> = (0..=self.nseg).map(|i| self.tau(i, 0.0)).collect();
        let pts: Vec<Point> = (0..=self.nseg)
            .map(|i| Point::from_column_slice(&nodes[i * n..(i + 1) * n]))
            .collect();
        let curve = Curve::piecewise_linear(times, pts);
        curve
            .velocities
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    fn pack(&self, nodes: &Nodes, vel: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = nodes[n..self.nseg * n].to_vec();
        z.extend_from_slice(vel);
        z
    }

    fn unpack<'z>(&'z self, z: &'z [f64]) -> (impl Fn(usize) -> &'z [f64] + 'z, &'z [f64]) {
        let n = self.n;
        let nseg = self.nseg;
        let split = (nseg - 1) * n;
        let (interior, vel) = z.split_at(split);
        let node = move |i: usize| -> &'z [f64] {
            if i == 0 {
                self.x
            } else if i == nseg {
                self.y
            } else {
                &interior[(i - 1) * n..i * n]
            }
        };
        (node, vel)
    }

    /// Euler-Lagrange residuals at the two Gauss points of every segment.
    /// Returns the force scale used to normalize the tolerance.
    fn residuals(&self, z: &[f64], out: &mut [f64]) -> f64 {
        let n = self.n;
        let h = self.h;
        let (node, vel) = self.unpack(z);
        let mut q = vec![0.0; n];
        let mut qd = vec![0.0; n];
        let mut qdd = vec![0.0; n];
        let mut lvv = vec![0.0; n * n];
        let mut lvx = vec![0.0; n * n];
        let mut lvt = vec![0.0; n];
        let mut lx = vec![0.0; n];
        let mut scale = 0.0_f64;
        for k in 0..self.nseg {
            let (a, b) = (node(k), node(k + 1));
            let (va, vb) = (&vel[k * n..(k + 1) * n], &vel[(k + 1) * n..(k + 2) * n]);
            for (g, sig) in GAUSS2_NODES.iter().enumerate() {
                let (h00, h10, h01, h11) = hermite_basis(*sig);
                let (d00, d10, d01, d11) = hermite_basis_d1(*sig);
                let (e00, e10, e01, e11) = hermite_basis_d2(*sig);
                for d in 0..n {
                    q[d] = h00 * a[d] + h10 * h * va[d] + h01 * b[d] + h11 * h * vb[d];
                    qd[d] = (d00 * a[d] + d01 * b[d]) / h + d10 * va[d] + d11 * vb[d];
                    qdd[d] = (e00 * a[d] + e01 * b[d]) / (h * h) + (e10 * va[d] + e11 * vb[d]) / h;
                }
                let tau = self.tau(k, *sig);
                self.l.hess_vv(tau, &q, &qd, &mut lvv);
                self.l.hess_vx(tau, &q, &qd, &mut lvx);
                self.l.hess_vt(tau, &q, &qd, &mut lvt);
                self.l.grad_x(tau, &q, &qd, &mut lx);
                let row = (2 * k + g) * n;
                for i in 0..n {
                    let mut acc = 0.0;
                    let mut inertia = 0.0;
                    for j in 0..n {
                        inertia += lvv[i * n + j] * qdd[j];
                        acc += lvx[i * n + j] * qd[j];
                    }
                    out[row + i] = inertia + acc + lvt[i] - lx[i];
                    scale = scale.max(inertia.abs()).max(lx[i].abs()).max(lvt[i].abs());
                }
            }
        }
        scale
    }

    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let nseg = self.nseg;
        let m = z.len();
        let split = (nseg - 1) * n;
        let mut jac = DMatrix::<f64>::zeros(m, m);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        let mut rp = vec![0.0; m];
        let mut rm = vec![0.0; m];
        // Unknown column index and the node it belongs to.
        let columns: Vec<(usize, usize, usize, bool)> = (0..m)
            .map(|j| {
                if j < split {
                    (j, j / n + 1, j % n, false)
                } else {
                    (j, (j - split) / n, (j - split) % n, true)
                }
            })
            .collect();
        for is_vel in [false, true] {
            for parity in 0..2 {
                for comp in 0..n {
                    let group: Vec<(usize, usize, f64)> = columns
                        .iter()
                        .filter(|(_, node, d, v)| *v == is_vel && node % 2 == parity && *d == comp)
                        .map(|(j, node, _, _)| (*j, *node, 1e-6 * z[*j].abs().max(1.0)))
                        .collect();
                    if group.is_empty() {
                        continue;
                    }
                    for (j, _, dz) in &group {
                        zp[*j] = z[*j] + dz;
                        zm[*j] = z[*j] - dz;
                    }
                    self.residuals(&zp, &mut rp);
                    self.residuals(&zm, &mut rm);
                    for (j, node, dz) in &group {
                        zp[*j] = z[*j];
                        zm[*j] = z[*j];
                        for seg in [node.wrapping_sub(1), *node] {
                            if seg >= nseg {
                                continue;
                            }
                            for row in (2 * seg * n)..(2 * (seg + 1) * n) {
                                jac[(row, *j)] = (rp[row] - rm[row]) / (2.0 * dz);
                            }
                        }
                    }
                }
            }
        }
        jac
    }

    /// Damped Newton on the collocation system. Returns `(z, residual, scale)`.
    fn collocate(&self, mut z: Vec<f64>, opts: &SolverOptions) -> (Vec<f64>, f64, f64) {
        let m = z.len();
        let mut r = vec![0.0; m];
        let mut rt = vec![0.0; m];
        let mut scale = self.residuals(&z, &mut r);
        let max_abs = |r: &[f64]| r.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let l2 = |r: &[f64]| r.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut res = max_abs(&r);
        for _ in 0..opts.max_newton_iters {
            if res <= opts.tol * scale.max(1.0) || !res.is_finite() {
                break;
            }
            let jac = self.jacobian(&z);
            let rhs = DVector::from_iterator(m, r.iter().map(|a| -a));
            let Some(dz) = jac.lu().solve(&rhs) else {
                break;
            };
            let base = l2(&r);
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-6 {
                let zt: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + alpha * b).collect();
                let st = self.residuals(&zt, &mut rt);
                let nt = l2(&rt);
                if nt.is_finite() && nt < (1.0 - 1e-4 * alpha) * base {
                    z = zt;
                    r.copy_from_slice(&rt);
                    scale = st;
                    res = max_abs(&r);
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (z, res, scale)
    }

    fn solve_from(&self, mut nodes: Nodes, opts: &SolverOptions) -> Result<FundamentalSolution> {
        self.descend(&mut nodes, 1e-3, opts.max_descent_iters / 4);
        let vel = self.initial_velocities(&nodes);
        let (z, res, scale) = self.collocate(self.pack(&nodes, &vel), opts);
        let tol = opts.tol * scale.max(1.0);
        if res <= tol {
            return Ok(self.assemble(&z, res, tol));
        }
        // Retry from a fully converged descent.
        self.descend(&mut nodes, 1e-10, opts.max_descent_iters * 4);
        let vel = self.initial_velocities(&nodes);
        let (z, res, scale) = self.collocate(self.pack(&nodes, &vel), opts);
        let tol = opts.tol * scale.max(1.0);
        if res <= tol {
            Ok(self.assemble(&z, res, tol))
        } else {
            Err(Error::NoConvergence { residual: res, tol })
        }
    }

    fn assemble(&self, z: &[f64], residual: f64, tol: f64) -> FundamentalSolution {
        let n = self.n;
        let h = self.h;
        let (node, vel) = self.unpack(z);
        let times: Vec<f64> = (0..=self.nseg).map(|i| self.tau(i, 0.0)).collect();
        let nodes: Vec<Point> = (0..=self.nseg)
            .map(|i| Point::from_column_slice(node(i)))
            .collect();
        let vels: Vec<Point> = (0..=self.nseg)
            .map(|i| Point::from_column_slice(&vel[i * n..(i + 1) * n]))
            .collect();

        let mut value = 0.0;
        let mut lip = 0.0_f64;
        let mut q = vec![0.0; n];
        let mut qd = vec![0.0; n];
        for k in 0..self.nseg {
            let (a, b) = (node(k), node(k + 1));
            let (va, vb) = (&vel[k * n..(k + 1) * n], &vel[(k + 1) * n..(k + 2) * n]);
            for (sig, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
                let (h00, h10, h01, h11) = hermite_basis(*sig);
                let (d00, d10, d01, d11) = hermite_basis_d1(*sig);
                for d in 0..n {
                    q[d] = h00 * a[d] + h10 * h * va[d] + h01 * b[d] + h11 * h * vb[d];
                    qd[d] = (d00 * a[d] + d01 * b[d]) / h + d10 * va[d] + d11 * vb[d];
                }
                value += h * w * self.l.value(self.tau(k, *sig), &q, &qd);
            }
            for sig in [0.0, 1.0] {
                let (e00, e10, e01, e11) = hermite_basis_d2(sig);
                let acc: f64 = (0..n)
                    .map(|d| {
                        let a2 = (e00 * a[d] + e01 * b[d]) / (h * h) + (e10 * va[d] + e11 * vb[d]) / h;
                        a2 * a2
                    })
                    .sum::<f64>()
                    .sqrt();
                lip = lip.max(acc);
            }
        }

        let curve = Curve::hermite(times, nodes, vels);
        let dual = dual_arc(self.l, &curve);
        let grad_y = dual.momenta.last().unwrap().clone();
        let grad_x = -dual.momenta[0].clone();
        FundamentalSolution {
            value,
            minimizer: curve,
            dual,
            grad_x,
            grad_y,
            residual,
            tol,
            velocity_lipschitz: lip,
        }
    }
}
