use super::{dot, norm, Point, TonelliLagrangian};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;

/// Value and maximizer of `v ↦ ⟨p, v⟩ − L(t, x, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LegendreResult {
    pub value: f64,
    pub argmax: Point,
    pub iterations: usize,
}

const MAX_ITER: usize = 100;

/// `H(t, x, p) = sup_v ⟨p, v⟩ − L(t, x, v)` by damped Newton on `L_v(t, x, v) = p` from `v = 0`.
pub fn legendre_transform(
    l: &dyn TonelliLagrangian,
    t: f64,
    x: &[f64],
    p: &[f64],
) -> Result<LegendreResult> {
    legendre_transform_from(l, t, x, p, None)
}

/// As [`legendre_transform`], starting Newton from `start` when given.
pub fn legendre_transform_from(
    l: &dyn TonelliLagrangian,
    t: f64,
    x: &[f64],
    p: &[f64],
    start: Option<&[f64]>,
) -> Result<LegendreResult> {
    if p.iter().any(|pi| !pi.is_finite()) {
        return Err(Error::InvalidInput("momentum must be finite".into()));
    }
    let (v, iterations, residual) = legendre_core(l, t, x, p, start, MAX_ITER);
    if residual > tolerance(p) {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(LegendreResult {
        value: dot(p, &v) - l.value(t, x, &v),
        argmax: Point::from_vec(v),
        iterations,
    })
}

fn tolerance(p: &[f64]) -> f64 {
    1e-10 * (1.0 + norm(p))
}

/// Newton iteration shared by the public transform and the numerical
/// Hamiltonian. Returns the last iterate, the iteration count and the final
/// residual `|L_v − p|`.
pub(crate) fn legendre_core(
    l: &dyn TonelliLagrangian,
    t: f64,
    x: &[f64],
    p: &[f64],
    start: Option<&[f64]>,
    cap: usize,
) -> (Vec<f64>, usize, f64) {
    let n = l.dim();
    let tol = tolerance(p);
    let mut v = start.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut g = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];

    let residual_at = |v: &[f64], g: &mut [f64]| {
        l.grad_v(t, x, v, g);
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi -= pi;
        }
        norm(g)
    };
    let objective = |v: &[f64]| dot(p, v) - l.value(t, x, v);

    let mut res = residual_at(&v, &mut g);
    for it in 0..cap {
        if res <= tol {
            return (v, it, res);
        }
        l.hess_vv(t, x, &v, &mut hess);
        let mut d: Vec<f64> = g.iter().map(|gi| -gi).collect();
        if !cholesky_solve(n, &mut hess, &mut d) {
            d = g.iter().map(|gi| -gi).collect();
        }
        let slope = -dot(&g, &d);
        let phi0 = objective(&v);
        let mut alpha = 1.0;
        loop {
            for i in 0..n {
                trial[i] = v[i] + alpha * d[i];
            }
            let res_t = residual_at(&trial, &mut gt);
            let armijo = objective(&trial) >= phi0 + 1e-4 * alpha * slope;
            if res_t.is_finite() && (armijo || res_t < res) {
                v.copy_from_slice(&trial);
                g.copy_from_slice(&gt);
                res = res_t;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return (v, it + 1, res);
            }
        }
    }
    (v, cap, res)
}
