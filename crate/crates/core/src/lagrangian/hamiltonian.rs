use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::catalog::{AnisotropicQuadratic, Mechanical};
use super::legendre::legendre_core;
use super::{dot, Point, QuadraticForm, TonelliLagrangian};

/// Where a Hamiltonian's values come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LegendreOfL,
    ClosedForm,
}

/// `H(t, x, p)`, convex in `p`. Vector outputs are written into `out`.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64;

    fn grad_p(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]);

    fn grad_x(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]);

    fn provenance(&self) -> Provenance;

    fn grad_p_vec(&self, t: f64, x: &[f64], p: &[f64]) -> Point {
        let mut out = Point::zeros(self.dim());
        self.grad_p(t, x, p, out.as_mut_slice());
        out
    }

    fn grad_x_vec(&self, t: f64, x: &[f64], p: &[f64]) -> Point {
        let mut out = Point::zeros(self.dim());
        self.grad_x(t, x, p, out.as_mut_slice());
        out
    }
}

/// `H(p) = |p − b|²/2 − a`, dual to `|v|²/2 + ⟨b, v⟩ + a`.
#[derive(Clone, Debug)]
pub(crate) struct QuadraticHamiltonian {
    form: QuadraticForm,
}

impl QuadraticHamiltonian {
    pub(crate) fn new(form: QuadraticForm) -> Self {
        Self { form }
    }
}

impl Hamiltonian for QuadraticHamiltonian {
    fn dim(&self) -> usize {
        self.form.drift.len()
    }

    fn value(&self, _t: f64, _x: &[f64], p: &[f64]) -> f64 {
        let d2: f64 = p
            .iter()
            .zip(&self.form.drift)
            .map(|(pi, bi)| (pi - bi) * (pi - bi))
            .sum();
        0.5 * d2 - self.form.constant
    }

    fn grad_p(&self, _t: f64, _x: &[f64], p: &[f64], out: &mut [f64]) {
        for ((o, pi), bi) in out.iter_mut().zip(p).zip(&self.form.drift) {
            *o = pi - bi;
        }
    }

    fn grad_x(&self, _t: f64, _x: &[f64], _p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn provenance(&self) -> Provenance {
        Provenance::ClosedForm
    }
}

/// `H(x, p) = |p|²/2 + V(x)`.
#[derive(Clone, Debug)]
pub(crate) struct MechanicalHamiltonian {
    l: Mechanical,
}

impl MechanicalHamiltonian {
    pub(crate) fn new(l: Mechanical) -> Self {
        Self { l }
    }
}

impl Hamiltonian for MechanicalHamiltonian {
    fn dim(&self) -> usize {
        self.l.dim()
    }

    fn value(&self, _t: f64, x: &[f64], p: &[f64]) -> f64 {
        0.5 * dot(p, p) + self.l.potential(x)
    }

    fn grad_p(&self, _t: f64, _x: &[f64], p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p);
    }

    fn grad_x(&self, _t: f64, x: &[f64], _p: &[f64], out: &mut [f64]) {
        self.l.potential_grad(x, out);
    }

    fn provenance(&self) -> Provenance {
        Provenance::ClosedForm
    }
}

/// `H(x, p) = ½⟨M(x)⁻¹p, p⟩`.
#[derive(Clone, Debug)]
pub(crate) struct AnisotropicHamiltonian {
    l: AnisotropicQuadratic,
}

impl AnisotropicHamiltonian {
    pub(crate) fn new(l: AnisotropicQuadratic) -> Self {
        Self { l }
    }
}

impl Hamiltonian for AnisotropicHamiltonian {
    fn dim(&self) -> usize {
        self.l.dim()
    }

    fn value(&self, _t: f64, x: &[f64], p: &[f64]) -> f64 {
        0.5 * dot(&self.l.metric_inverse_apply(x, p), p)
    }

    fn grad_p(&self, _t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.l.metric_inverse_apply(x, p));
    }

    fn grad_x(&self, _t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        let q = self.l.metric_inverse_apply(x, p);
        let s = AnisotropicQuadratic::sines(x);
        let sq = dot(&s, &q);
        for j in 0..out.len() {
            out[j] = -self.l.coupling() * x[j].cos() * q[j] * sq;
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::ClosedForm
    }
}

/// Hamiltonian obtained by numerically Legendre-transforming a Lagrangian.
#[derive(Clone, Debug)]
pub struct LegendreHamiltonian {
    l: Arc<dyn TonelliLagrangian>,
}

impl LegendreHamiltonian {
    pub fn new(l: Arc<dyn TonelliLagrangian>) -> Self {
        Self { l }
    }

    fn argmax(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        legendre_core(self.l.as_ref(), t, x, p, None, 500).0
    }
}

impl Hamiltonian for LegendreHamiltonian {
    fn dim(&self) -> usize {
        self.l.dim()
    }

    fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        let v = self.argmax(t, x, p);
        dot(p, &v) - self.l.value(t, x, &v)
    }

    fn grad_p(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.argmax(t, x, p));
    }

    fn grad_x(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        let v = self.argmax(t, x, p);
        self.l.grad_x(t, x, &v, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::LegendreOfL
    }
}

/// `H^λ(t, x, p) = e^{λt} H(x, e^{−λt} p)` for a time-independent `H`.
#[derive(Clone, Debug)]
pub struct LiftedHamiltonian {
    base: Arc<dyn Hamiltonian>,
    lambda: f64,
}

impl LiftedHamiltonian {
    pub fn new(base: Arc<dyn Hamiltonian>, lambda: f64) -> Self {
        Self { base, lambda }
    }

    fn shrink(&self, t: f64, p: &[f64]) -> (f64, Vec<f64>) {
        let w = (self.lambda * t).exp();
        (w, p.iter().map(|pi| pi / w).collect())
    }
}

impl Hamiltonian for LiftedHamiltonian {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        let (w, q) = self.shrink(t, p);
        w * self.base.value(0.0, x, &q)
    }

    fn grad_p(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        let (_, q) = self.shrink(t, p);
        self.base.grad_p(0.0, x, &q, out);
    }

    fn grad_x(&self, t: f64, x: &[f64], p: &[f64], out: &mut [f64]) {
        let (w, q) = self.shrink(t, p);
        self.base.grad_x(0.0, x, &q, out);
        for o in out.iter_mut() {
            *o *= w;
        }
    }

    fn provenance(&self) -> Provenance {
        self.base.provenance()
    }
}

/// Discounted lift of a time-independent Hamiltonian.
pub fn hamiltonian_lift(h: Arc<dyn Hamiltonian>, lambda: f64) -> LiftedHamiltonian {
    LiftedHamiltonian::new(h, lambda)
}
