//! Time-dependent Tonelli Lagrangians, their Hamiltonians and the
//! discounted lift `L^λ(t, x, v) = e^{λt} L(x, v)`.
//!
//! Lagrangians are evaluated on plain slices so that the hot loops of the
//! action solver and the value iteration do not allocate. Convenience
//! wrappers returning `nalgebra` vectors live on [`LagrangianExt`].

mod catalog;
mod hamiltonian;
mod legendre;
mod verify;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::action::ActionEval;
use crate::error::{Error, Result};

pub use catalog::{
    discount_lift, AnisotropicQuadratic, Discounted, Drift, FreeParticle, Mechanical,
    PotentialKind,
};
pub use hamiltonian::{
    hamiltonian_lift, Hamiltonian, LegendreHamiltonian, LiftedHamiltonian, Provenance,
};
pub use legendre::{legendre_transform, legendre_transform_from, LegendreResult};
pub use verify::{verify_tonelli, SampleSpec};

/// Points, velocities and momenta in `ℝⁿ`.
pub type Point = DVector<f64>;

/// Closed time interval on which a Lagrangian's certificates hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub const UNBOUNDED: TimeWindow = TimeWindow {
        start: f64::NEG_INFINITY,
        end: f64::INFINITY,
    };

    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start < end) {
            return Err(Error::InvalidInput(format!(
                "empty time window [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-12 * (1.0 + t.abs());
        t >= self.start - slack && t <= self.end + slack
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfWindow {
                t,
                start: self.start,
                end: self.end,
            })
        }
    }
}

/// A superlinear function `θ: [0, ∞) → [0, ∞)` used in growth certificates.
#[derive(Clone)]
pub struct Superlinear {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Superlinear {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    /// `θ(r) = k r² / 2 + offset`.
    pub fn quadratic(k: f64, offset: f64) -> Self {
        Self::new(format!("{k}*r^2/2 + {offset}"), move |r| 0.5 * k * r * r + offset)
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.f)(r)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `r ↦ factor · θ(r)`.
    pub fn scaled(&self, factor: f64) -> Self {
        let f = self.f.clone();
        Self {
            label: format!("{factor}*({})", self.label),
            f: Arc::new(move |r| factor * f(r)),
        }
    }
}

impl fmt::Debug for Superlinear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Superlinear({})", self.label)
    }
}

/// Growth certificates: `θ(|v|) − c0 ≤ L ≤ θ̄(|v|)` and `|L_t| ≤ c (1 + L)`.
///
/// `c` is `f64::INFINITY` when no finite time-derivative constant exists.
#[derive(Clone, Debug)]
pub struct Growth {
    pub lower: Superlinear,
    pub upper: Superlinear,
    pub c0: f64,
    pub c: f64,
}

/// Coefficients of a Lagrangian of the form `|v|²/2 + ⟨b, v⟩ + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub drift: Vec<f64>,
    pub constant: f64,
}

/// A `C²` Lagrangian `L(t, x, v)`, strictly convex and superlinear in `v`.
///
/// Matrix outputs are row-major `n × n` slices.
pub trait TonelliLagrangian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn label(&self) -> String;

    fn value(&self, t: f64, x: &[f64], v: &[f64]) -> f64;

    fn grad_t(&self, t: f64, x: &[f64], v: &[f64]) -> f64;

    fn grad_x(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    fn grad_v(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    fn hess_vv(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    /// Mixed derivative `∂(L_v)_i / ∂x_j`. Defaults to central differences of `grad_v`.
    fn hess_vx(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            self.grad_v(t, &xp, v, &mut gp);
            xp[j] = x[j] - h;
            self.grad_v(t, &xp, v, &mut gm);
            xp[j] = x[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
    }

    /// `∂L_v / ∂t`. Defaults to central differences of `grad_v`.
    fn hess_vt(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let h = 1e-5 * (1.0 + t.abs());
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        self.grad_v(t + h, x, v, &mut gp);
        self.grad_v(t - h, x, v, &mut gm);
        for i in 0..n {
            out[i] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }

    fn growth(&self) -> Growth;

    fn time_window(&self) -> TimeWindow {
        TimeWindow::UNBOUNDED
    }

    fn is_time_independent(&self) -> bool;

    /// True when the potential has several wells, so minimizers over long
    /// horizons may be non-unique.
    fn has_multiple_wells(&self) -> bool {
        false
    }

    /// `Some` when `L = |v|²/2 + ⟨b, v⟩ + a` with constant `b` and `a`.
    fn quadratic_form(&self) -> Option<QuadraticForm> {
        None
    }

    /// Exact fundamental solution and endpoint gradients, when known.
    fn closed_form_action(&self, _s: f64, _t: f64, _x: &[f64], _y: &[f64]) -> Option<ActionEval> {
        None
    }

    /// Hamiltonian in closed form, when known.
    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        None
    }
}

/// Allocating helpers on top of [`TonelliLagrangian`].
pub trait LagrangianExt: TonelliLagrangian {
    fn grad_x_vec(&self, t: f64, x: &[f64], v: &[f64]) -> Point {
        let mut out = Point::zeros(self.dim());
        self.grad_x(t, x, v, out.as_mut_slice());
        out
    }

    fn grad_v_vec(&self, t: f64, x: &[f64], v: &[f64]) -> Point {
        let mut out = Point::zeros(self.dim());
        self.grad_v(t, x, v, out.as_mut_slice());
        out
    }

    fn hess_vv_mat(&self, t: f64, x: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.hess_vv(t, x, v, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// Hamiltonian for this Lagrangian: closed form when available, otherwise
    /// a numerical Legendre transform.
    fn hamiltonian(self: Arc<Self>) -> Arc<dyn Hamiltonian>
    where
        Self: Sized + 'static,
    {
        match self.closed_form_hamiltonian() {
            Some(h) => h,
            None => Arc::new(LegendreHamiltonian::new(self)),
        }
    }
}

impl<T: TonelliLagrangian + ?Sized> LagrangianExt for T {}

/// Hamiltonian of a shared Lagrangian trait object.
pub fn hamiltonian_of(l: &Arc<dyn TonelliLagrangian>) -> Arc<dyn Hamiltonian> {
    match l.closed_form_hamiltonian() {
        Some(h) => h,
        None => Arc::new(LegendreHamiltonian::new(l.clone())),
    }
}

/// Largest `r ≥ 0` with `θ(r) − lip·r ≤ budget`.
///
/// This is the coercivity bound behind every localization radius in the
/// crate: a competitor that moves at average speed `r` pays at least
/// `θ(r)` per unit time and gains at most `lip·r`.
pub fn coercivity_radius(theta: &Superlinear, lip: f64, budget: f64) -> f64 {
    let excess = |r: f64| theta.eval(r) - lip * r - budget;
    let mut hi = 1.0_f64.max(lip);
    let mut guard = 0;
    while excess(hi) <= 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return f64::INFINITY;
        }
    }
    // `excess` is convex with excess(0) ≤ 0 whenever budget ≥ θ(0); bisect on
    // the last sign change.
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    hi
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
