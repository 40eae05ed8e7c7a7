//! Built-in Lagrangians: free particle, constant drift, mechanical systems,
//! an anisotropic quadratic metric, and the discounted lift of any
//! time-independent member.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hamiltonian::{
    AnisotropicHamiltonian, Hamiltonian, LiftedHamiltonian, MechanicalHamiltonian,
    QuadraticHamiltonian,
};
use super::{dot, norm, Growth, QuadraticForm, Superlinear, TimeWindow, TonelliLagrangian};
use crate::action::ActionEval;
use crate::error::{Error, Result};

/// `L(v) = |v|²/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeParticle {
    dim: usize,
}

impl FreeParticle {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl TonelliLagrangian for FreeParticle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        "free".into()
    }

    fn value(&self, _t: f64, _x: &[f64], v: &[f64]) -> f64 {
        0.5 * dot(v, v)
    }

    fn grad_t(&self, _t: f64, _x: &[f64], _v: &[f64]) -> f64 {
        0.0
    }

    fn grad_x(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_v(&self, _t: f64, _x: &[f64], v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
    }

    fn hess_vv(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        identity_into(self.dim, out);
    }

    fn hess_vx(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_vt(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn growth(&self) -> Growth {
        Growth {
            lower: Superlinear::quadratic(1.0, 0.0),
            upper: Superlinear::quadratic(1.0, 0.0),
            c0: 0.0,
            c: 0.0,
        }
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        Some(QuadraticForm {
            drift: vec![0.0; self.dim],
            constant: 0.0,
        })
    }

    fn closed_form_action(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<ActionEval> {
        Some(quadratic_action(&self.quadratic_form()?, None, s, t, x, y))
    }

    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        Some(Arc::new(QuadraticHamiltonian::new(self.quadratic_form()?)))
    }
}

/// `L(v) = |v|²/2 + ⟨b, v⟩`, whose Hamiltonian is `|p − b|²/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Drift {
    drift: Vec<f64>,
}

impl Drift {
    pub fn new(drift: Vec<f64>) -> Self {
        assert!(!drift.is_empty(), "dimension must be positive");
        Self { drift }
    }
}

impl TonelliLagrangian for Drift {
    fn dim(&self) -> usize {
        self.drift.len()
    }

    fn label(&self) -> String {
        format!("drift{:?}", self.drift)
    }

    fn value(&self, _t: f64, _x: &[f64], v: &[f64]) -> f64 {
        0.5 * dot(v, v) + dot(&self.drift, v)
    }

    fn grad_t(&self, _t: f64, _x: &[f64], _v: &[f64]) -> f64 {
        0.0
    }

    fn grad_x(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_v(&self, _t: f64, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for ((o, vi), bi) in out.iter_mut().zip(v).zip(&self.drift) {
            *o = vi + bi;
        }
    }

    fn hess_vv(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        identity_into(self.dim(), out);
    }

    fn hess_vx(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_vt(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn growth(&self) -> Growth {
        // |v|²/2 ± |b||v| is squeezed between |v|²/4 − |b|² and |v|² + |b|²/2.
        let b2 = dot(&self.drift, &self.drift);
        Growth {
            lower: Superlinear::quadratic(0.5, 0.0),
            upper: Superlinear::quadratic(2.0, 0.5 * b2),
            c0: b2,
            c: 0.0,
        }
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        Some(QuadraticForm {
            drift: self.drift.clone(),
            constant: 0.0,
        })
    }

    fn closed_form_action(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<ActionEval> {
        Some(quadratic_action(&self.quadratic_form()?, None, s, t, x, y))
    }

    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        Some(Arc::new(QuadraticHamiltonian::new(self.quadratic_form()?)))
    }
}

/// Shape of the potential in a [`Mechanical`] Lagrangian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// `P ≡ 0`.
    Flat,
    /// `P(x) = Σ cos(k xᵢ)`.
    Cos,
    /// `P(x) = C·tanh(((|x|² − 1)²/4)/C) − 1/4`: the double well
    /// `|x|⁴/4 − |x|²/2` with its growth smoothly saturated at height `C`.
    DoubleWell,
}

/// `L(x, v) = |v|²/2 − V(x)` with `V(x) = a·P(x) + shift + ⟨tilt, x⟩`.
///
/// The growth certificates are computed on the ball of radius
/// `certify_radius`; a tilted potential is unbounded on `ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanical {
    dim: usize,
    kind: PotentialKind,
    amplitude: f64,
    shift: f64,
    frequency: f64,
    cutoff: f64,
    tilt: Vec<f64>,
    certify_radius: f64,
}

impl Mechanical {
    pub fn new(dim: usize, kind: PotentialKind) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            kind,
            amplitude: 1.0,
            shift: 0.0,
            frequency: 1.0,
            cutoff: 4.0,
            tilt: vec![0.0; dim],
            certify_radius: 10.0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_frequency(mut self, frequency: f64) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        assert!(cutoff > 0.0, "cutoff height must be positive");
        self.cutoff = cutoff;
        self
    }

    pub fn with_tilt(mut self, tilt: Vec<f64>) -> Self {
        assert_eq!(tilt.len(), self.dim, "tilt dimension mismatch");
        self.tilt = tilt;
        self
    }

    pub fn with_certify_radius(mut self, radius: f64) -> Self {
        assert!(radius > 0.0, "certification radius must be positive");
        self.certify_radius = radius;
        self
    }

    /// `L = |v|²/2 + W(x)` with `W = (|x|² − 1)²/4` (saturated), an even double
    /// well with minima `W = 0` at `|x| = 1` and a ridge `W = 1/4` at the origin.
    pub fn double_well_cost(dim: usize) -> Self {
        Self::new(dim, PotentialKind::DoubleWell)
            .with_amplitude(-1.0)
            .with_shift(-0.25)
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    fn shape(&self, x: &[f64]) -> f64 {
        match self.kind {
            PotentialKind::Flat => 0.0,
            PotentialKind::Cos => x.iter().map(|xi| (self.frequency * xi).cos()).sum(),
            PotentialKind::DoubleWell => {
                let r2 = dot(x, x);
                let w0 = 0.25 * (r2 - 1.0) * (r2 - 1.0);
                self.cutoff * (w0 / self.cutoff).tanh() - 0.25
            }
        }
    }

    fn shape_grad(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            PotentialKind::Flat => out.fill(0.0),
            PotentialKind::Cos => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -self.frequency * (self.frequency * xi).sin();
                }
            }
            PotentialKind::DoubleWell => {
                let r2 = dot(x, x);
                let w0 = 0.25 * (r2 - 1.0) * (r2 - 1.0);
                let sech = 1.0 / (w0 / self.cutoff).cosh();
                let factor = sech * sech * (r2 - 1.0);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = factor * xi;
                }
            }
        }
    }

    /// Potential `V(x)`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        self.amplitude * self.shape(x) + self.shift + dot(&self.tilt, x)
    }

    /// Gradient of `V` written into `out`.
    pub fn potential_grad(&self, x: &[f64], out: &mut [f64]) {
        self.shape_grad(x, out);
        for (o, ti) in out.iter_mut().zip(&self.tilt) {
            *o = self.amplitude * *o + ti;
        }
    }

    /// Bounds of `V` on the certification ball.
    pub fn potential_bounds(&self) -> (f64, f64) {
        let r = self.certify_radius;
        let (pmin, pmax) = match self.kind {
            PotentialKind::Flat => (0.0, 0.0),
            PotentialKind::Cos => (-(self.dim as f64), self.dim as f64),
            PotentialKind::DoubleWell => {
                let w = |r2: f64| 0.25 * (r2 - 1.0) * (r2 - 1.0);
                let wmin = if r >= 1.0 { 0.0 } else { w(r * r) };
                let wmax = w(0.0).max(w(r * r));
                let sat = |w0: f64| self.cutoff * (w0 / self.cutoff).tanh() - 0.25;
                (sat(wmin), sat(wmax))
            }
        };
        let (a, b) = (self.amplitude * pmin, self.amplitude * pmax);
        let tilt = norm(&self.tilt) * r;
        (a.min(b) + self.shift - tilt, a.max(b) + self.shift + tilt)
    }

    fn is_flat(&self) -> bool {
        (self.kind == PotentialKind::Flat || self.amplitude == 0.0)
            && self.tilt.iter().all(|t| *t == 0.0)
    }
}

impl TonelliLagrangian for Mechanical {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        format!(
            "mechanical({:?}, a={}, shift={}, tilt={:?})",
            self.kind, self.amplitude, self.shift, self.tilt
        )
    }

    fn value(&self, _t: f64, x: &[f64], v: &[f64]) -> f64 {
        0.5 * dot(v, v) - self.potential(x)
    }

    fn grad_t(&self, _t: f64, _x: &[f64], _v: &[f64]) -> f64 {
        0.0
    }

    fn grad_x(&self, _t: f64, x: &[f64], _v: &[f64], out: &mut [f64]) {
        self.potential_grad(x, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    fn grad_v(&self, _t: f64, _x: &[f64], v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
    }

    fn hess_vv(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        identity_into(self.dim, out);
    }

    fn hess_vx(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_vt(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn growth(&self) -> Growth {
        let (vmin, vmax) = self.potential_bounds();
        Growth {
            lower: Superlinear::quadratic(1.0, 0.0),
            upper: Superlinear::quadratic(1.0, (-vmin).max(0.0)),
            c0: vmax.max(0.0),
            c: 0.0,
        }
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn has_multiple_wells(&self) -> bool {
        matches!(self.kind, PotentialKind::Cos | PotentialKind::DoubleWell) && self.amplitude != 0.0
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        self.is_flat().then(|| QuadraticForm {
            drift: vec![0.0; self.dim],
            constant: -self.shift,
        })
    }

    fn closed_form_action(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<ActionEval> {
        Some(quadratic_action(&self.quadratic_form()?, None, s, t, x, y))
    }

    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        Some(Arc::new(MechanicalHamiltonian::new(self.clone())))
    }
}

/// `L(x, v) = ½⟨M(x)v, v⟩` with `M(x) = diag(a) + ε s(x)s(x)ᵀ`, `s(x)ᵢ = sin xᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnisotropicQuadratic {
    diag: Vec<f64>,
    coupling: f64,
}

impl AnisotropicQuadratic {
    pub fn new(diag: Vec<f64>, coupling: f64) -> Self {
        assert!(!diag.is_empty(), "dimension must be positive");
        assert!(diag.iter().all(|a| *a > 0.0), "diagonal must be positive");
        assert!(coupling >= 0.0, "coupling must be nonnegative");
        Self { diag, coupling }
    }

    pub(crate) fn sines(x: &[f64]) -> Vec<f64> {
        x.iter().map(|xi| xi.sin()).collect()
    }

    /// `M(x)⁻¹ p` by Sherman-Morrison.
    pub fn metric_inverse_apply(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let s = Self::sines(x);
        let dinv_p: Vec<f64> = p.iter().zip(&self.diag).map(|(pi, a)| pi / a).collect();
        let dinv_s: Vec<f64> = s.iter().zip(&self.diag).map(|(si, a)| si / a).collect();
        let denom = 1.0 + self.coupling * dot(&s, &dinv_s);
        let k = self.coupling * dot(&s, &dinv_p) / denom;
        dinv_p.iter().zip(&dinv_s).map(|(a, b)| a - k * b).collect()
    }

    pub(crate) fn coupling(&self) -> f64 {
        self.coupling
    }
}

impl TonelliLagrangian for AnisotropicQuadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn label(&self) -> String {
        format!("anisotropic(diag={:?}, eps={})", self.diag, self.coupling)
    }

    fn value(&self, _t: f64, x: &[f64], v: &[f64]) -> f64 {
        let sv: f64 = x.iter().zip(v).map(|(xi, vi)| xi.sin() * vi).sum();
        let dv: f64 = self.diag.iter().zip(v).map(|(a, vi)| a * vi * vi).sum();
        0.5 * (dv + self.coupling * sv * sv)
    }

    fn grad_t(&self, _t: f64, _x: &[f64], _v: &[f64]) -> f64 {
        0.0
    }

    fn grad_x(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let sv: f64 = x.iter().zip(v).map(|(xi, vi)| xi.sin() * vi).sum();
        for ((o, xi), vi) in out.iter_mut().zip(x).zip(v) {
            *o = self.coupling * sv * xi.cos() * vi;
        }
    }

    fn grad_v(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let s = Self::sines(x);
        let sv = dot(&s, v);
        for i in 0..self.dim() {
            out[i] = self.diag[i] * v[i] + self.coupling * s[i] * sv;
        }
    }

    fn hess_vv(&self, _t: f64, x: &[f64], _v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let s = Self::sines(x);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.coupling * s[i] * s[j] + if i == j { self.diag[i] } else { 0.0 };
            }
        }
    }

    fn hess_vx(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let s = Self::sines(x);
        let sv = dot(&s, v);
        for i in 0..n {
            for j in 0..n {
                let cj = x[j].cos();
                let diag = if i == j { cj * sv } else { 0.0 };
                out[i * n + j] = self.coupling * (diag + s[i] * cj * v[j]);
            }
        }
    }

    fn hess_vt(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn growth(&self) -> Growth {
        let lo = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.diag.iter().cloned().fold(0.0, f64::max) + self.coupling * self.dim() as f64;
        Growth {
            lower: Superlinear::quadratic(lo, 0.0),
            upper: Superlinear::quadratic(hi, 0.0),
            c0: 0.0,
            c: 0.0,
        }
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        Some(Arc::new(AnisotropicHamiltonian::new(self.clone())))
    }
}

/// `L^λ(t, x, v) = e^{λt} L(x, v)` certified on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct Discounted {
    base: Arc<dyn TonelliLagrangian>,
    lambda: f64,
    horizon: f64,
}

/// Lifts a time-independent Lagrangian to `e^{λt} L(x, v)` on `[0, horizon]`.
pub fn discount_lift(
    base: Arc<dyn TonelliLagrangian>,
    lambda: f64,
    horizon: f64,
) -> Result<Discounted> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidHorizon(horizon));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "discount rate must be positive, got {lambda}"
        )));
    }
    if !base.is_time_independent() {
        return Err(Error::InvalidInput(
            "discount lift needs a time-independent Lagrangian".into(),
        ));
    }
    Ok(Discounted {
        base,
        lambda,
        horizon,
    })
}

impl Discounted {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn base(&self) -> &Arc<dyn TonelliLagrangian> {
        &self.base
    }

    #[inline]
    fn weight(&self, t: f64) -> f64 {
        (self.lambda * t).exp()
    }
}

impl TonelliLagrangian for Discounted {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn label(&self) -> String {
        format!("discounted({}, lambda={})", self.base.label(), self.lambda)
    }

    fn value(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        self.weight(t) * self.base.value(0.0, x, v)
    }

    fn grad_t(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        self.lambda * self.weight(t) * self.base.value(0.0, x, v)
    }

    fn grad_x(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.grad_x(0.0, x, v, out);
        scale(out, self.weight(t));
    }

    fn grad_v(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.grad_v(0.0, x, v, out);
        scale(out, self.weight(t));
    }

    fn hess_vv(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.hess_vv(0.0, x, v, out);
        scale(out, self.weight(t));
    }

    fn hess_vx(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.hess_vx(0.0, x, v, out);
        scale(out, self.weight(t));
    }

    fn hess_vt(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.grad_v(0.0, x, v, out);
        scale(out, self.lambda * self.weight(t));
    }

    fn growth(&self) -> Growth {
        let g = self.base.growth();
        let stretch = (self.lambda * self.horizon).exp();
        let c0 = g.c0 * stretch;
        // |L^λ_t| = λ|L^λ|; on {L ≥ 0} the ratio to 1 + L^λ is at most λ, on
        // {L < 0} it is at most λ·c0'/(1 − c0'), which needs c0' < 1.
        let c = if c0 < 1.0 {
            self.lambda * (c0 / (1.0 - c0)).max(1.0)
        } else {
            f64::INFINITY
        };
        Growth {
            lower: g.lower,
            upper: g.upper.scaled(stretch),
            c0,
            c,
        }
    }

    fn time_window(&self) -> TimeWindow {
        TimeWindow {
            start: 0.0,
            end: self.horizon,
        }
    }

    fn is_time_independent(&self) -> bool {
        false
    }

    fn has_multiple_wells(&self) -> bool {
        self.base.has_multiple_wells()
    }

    fn closed_form_action(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<ActionEval> {
        let form = self.base.quadratic_form()?;
        Some(quadratic_action(&form, Some(self.lambda), s, t, x, y))
    }

    fn closed_form_hamiltonian(&self) -> Option<Arc<dyn Hamiltonian>> {
        let h = self.base.closed_form_hamiltonian()?;
        Some(Arc::new(LiftedHamiltonian::new(h, self.lambda)))
    }
}

/// Fundamental solution of `e^{λτ}(|v|²/2 + ⟨b, v⟩ + a)` (`λ = 0` when `discount` is `None`).
///
/// Writing `w = ξ̇ + b`, the Euler-Lagrange equation gives `w(τ) = c e^{−λτ}`,
/// so with `Δ = y − x + b(t − s)` and `D = ∫ e^{−λτ}dτ` the minimal action is
/// `|Δ|²/(2D) + (a − |b|²/2)∫e^{λτ}dτ` and both endpoint gradients are `±Δ/D`.
pub(crate) fn quadratic_action(
    form: &QuadraticForm,
    discount: Option<f64>,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> ActionEval {
    let gap = t - s;
    let (d, growth) = match discount {
        Some(lambda) if lambda > 0.0 => (
            ((-lambda * s).exp() - (-lambda * t).exp()) / lambda,
            ((lambda * t).exp() - (lambda * s).exp()) / lambda,
        ),
        _ => (gap, gap),
    };
    let b2 = dot(&form.drift, &form.drift);
    let delta: Vec<f64> = x
        .iter()
        .zip(y)
        .zip(&form.drift)
        .map(|((xi, yi), bi)| yi - xi + bi * gap)
        .collect();
    let value = dot(&delta, &delta) / (2.0 * d) + (form.constant - 0.5 * b2) * growth;
    let c = super::Point::from_iterator(delta.len(), delta.iter().map(|di| di / d));
    ActionEval {
        value,
        grad_x: -c.clone(),
        grad_y: c,
    }
}

fn identity_into(n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

fn scale(out: &mut [f64], k: f64) {
    for o in out.iter_mut() {
        *o *= k;
    }
}
