use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{norm, TonelliLagrangian};
use crate::probe::ProbeReport;

/// Where and how densely to sample `(t, x, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    /// Lower corner of the position box.
    pub lower: Vec<f64>,
    /// Upper corner of the position box.
    pub upper: Vec<f64>,
    /// Velocities are drawn from the ball of this radius.
    pub velocity_radius: f64,
    /// Time interval; clipped to the Lagrangian's window.
    pub times: (f64, f64),
    pub count: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn cube(dim: usize, half_width: f64, velocity_radius: f64, count: usize) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
            velocity_radius,
            times: (0.0, 1.0),
            count,
            seed: 0,
        }
    }

    pub fn with_times(mut self, start: f64, end: f64) -> Self {
        self.times = (start, end);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Relative tolerance for analytic derivatives against finite differences.
const DERIVATIVE_TOL: f64 = 1e-6;

/// Samples the Tonelli conditions: positive definite `L_vv`, the two-sided
/// growth bound, the time-derivative bound, and agreement of every analytic
/// derivative with 4th-order central differences.
pub fn verify_tonelli(l: &dyn TonelliLagrangian, spec: &SampleSpec) -> ProbeReport {
    let n = l.dim();
    let mut report = ProbeReport::new("verify_tonelli");
    let growth = l.growth();
    let window = l.time_window();
    let t0 = spec.times.0.max(window.start);
    let t1 = spec.times.1.min(window.end);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut min_eig = f64::INFINITY;
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::INFINITY;
    let mut worst_l3 = 0.0_f64;
    let mut worst_deriv = 0.0_f64;

    let mut hess = vec![0.0; n * n];
    let mut gx = vec![0.0; n];
    let mut gv = vec![0.0; n];

    for k in 0..spec.count {
        let t = if t1 > t0 { rng.gen_range(t0..=t1) } else { t0 };
        let x: Vec<f64> = (0..n)
            .map(|i| rng.gen_range(spec.lower[i]..=spec.upper[i]))
            .collect();
        let v = sample_ball(&mut rng, n, spec.velocity_radius);
        let val = l.value(t, &x, &v);
        let speed = norm(&v);

        l.hess_vv(t, &x, &v, &mut hess);
        let m = DMatrix::from_row_slice(n, n, &hess);
        let asym = (&m - m.transpose()).abs().max();
        let eig = SymmetricEigen::new(m).eigenvalues.min();
        min_eig = min_eig.min(eig);
        report.check(eig, || format!("sample {k}: L_vv has eigenvalue {eig}"));
        report.check(1e-10 - asym, || format!("sample {k}: L_vv asymmetry {asym}"));

        let lower = val - (growth.lower.eval(speed) - growth.c0);
        let upper = growth.upper.eval(speed) - val;
        let tol = 1e-12 * (1.0 + val.abs());
        worst_lower = worst_lower.min(lower);
        worst_upper = worst_upper.min(upper);
        report.check(lower + tol, || format!("sample {k}: lower growth slack {lower}"));
        report.check(upper + tol, || format!("sample {k}: upper growth slack {upper}"));

        let lt = l.grad_t(t, &x, &v);
        let denom = 1.0 + val;
        let ratio = if lt == 0.0 {
            0.0
        } else if denom > 0.0 {
            lt.abs() / denom
        } else {
            f64::INFINITY
        };
        worst_l3 = worst_l3.max(ratio);
        report.check(growth.c * (1.0 + 1e-12) - ratio, || {
            format!("sample {k}: |L_t|/(1+L) = {ratio} exceeds c = {}", growth.c)
        });

        // Derivatives against 4th-order central differences.
        let scale = |a: f64| a.abs().max(1.0);
        let mut err = 0.0_f64;
        let fd_t = fd4(|s| l.value(s, &x, &v), t);
        err = err.max((fd_t - lt).abs() / scale(lt));
        l.grad_x(t, &x, &v, &mut gx);
        l.grad_v(t, &x, &v, &mut gv);
        for i in 0..n {
            let fx = fd4(|s| l.value(t, &replace(&x, i, s), &v), x[i]);
            err = err.max((fx - gx[i]).abs() / scale(gx[i]));
            let fv = fd4(|s| l.value(t, &x, &replace(&v, i, s)), v[i]);
            err = err.max((fv - gv[i]).abs() / scale(gv[i]));
            for j in 0..n {
                let fvv = fd4(
                    |s| {
                        let mut g = vec![0.0; n];
                        l.grad_v(t, &x, &replace(&v, j, s), &mut g);
                        g[i]
                    },
                    v[j],
                );
                let h = hess[i * n + j];
                err = err.max((fvv - h).abs() / scale(h));
            }
        }
        worst_deriv = worst_deriv.max(err);
        report.check(DERIVATIVE_TOL - err, || {
            format!("sample {k}: derivative mismatch {err:e}")
        });
    }

    report.samples = spec.count;
    report.set("min_eig_Lvv", min_eig);
    report.set("worst_lower_growth_slack", worst_lower);
    report.set("worst_upper_growth_slack", worst_upper);
    report.set("worst_L3_ratio", worst_l3);
    report.set("c", growth.c);
    report.set("c0", growth.c0);
    report.set("worst_derivative_error", worst_deriv);
    report
}

pub(crate) fn sample_ball<R: Rng>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = norm(&v);
        if r <= 1.0 {
            return v.into_iter().map(|c| c * radius).collect();
        }
    }
}

fn replace(a: &[f64], i: usize, value: f64) -> Vec<f64> {
    let mut b = a.to_vec();
    b[i] = value;
    b
}

/// Five-point stencil derivative with step scaled to the argument.
pub(crate) fn fd4(f: impl Fn(f64) -> f64, a: f64) -> f64 {
    let h = 1e-3 * (1.0 + a.abs());
    (f(a - 2.0 * h) - 8.0 * f(a - h) + 8.0 * f(a + h) - f(a + 2.0 * h)) / (12.0 * h)
}
