//! Fundamental solutions `A_{s,t}(x, y)`: least action over curves from `x`
//! at time `s` to `y` at time `t`.
//!
//! The solver works in two phases. A quasi-Newton descent on a piecewise
//! linear curve finds the basin of a minimizer; cubic Hermite collocation of
//! the Euler-Lagrange equation then polishes it to a `C¹` curve whose endpoint
//! momenta give the gradients of `A`.

mod kernel;
mod probes;
mod solver;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{Point, TonelliLagrangian};

pub use kernel::ActionKernel;
pub use probes::{
    probe_compact_containment, probe_convexity, probe_semiconcavity, probe_velocity_bounds,
    ProbeConfig,
};
pub use solver::{minimize_action, minimize_action_with, SolverOptions};

/// Value of `A_{s,t}(x, y)` together with `D_x A` and `D_y A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionEval {
    pub value: f64,
    pub grad_x: Point,
    pub grad_y: Point,
}

/// How a [`Curve`] is interpolated between its nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    PiecewiseLinear,
    Hermite,
}

/// A curve sampled on a strictly increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub times: Vec<f64>,
    pub nodes: Vec<Point>,
    /// Node velocities: exact for Hermite curves, three-point differences
    /// for piecewise linear ones.
    pub velocities: Vec<Point>,
    pub interpolation: Interpolation,
}

impl Curve {
    /// Piecewise linear curve; node velocities use three-point differences.
    pub fn piecewise_linear(times: Vec<f64>, nodes: Vec<Point>) -> Self {
        assert!(times.len() >= 2 && times.len() == nodes.len());
        let velocities = three_point_velocities(&times, &nodes);
        Self {
            times,
            nodes,
            velocities,
            interpolation: Interpolation::PiecewiseLinear,
        }
    }

    pub fn hermite(times: Vec<f64>, nodes: Vec<Point>, velocities: Vec<Point>) -> Self {
        assert!(times.len() >= 2 && times.len() == nodes.len() && nodes.len() == velocities.len());
        Self {
            times,
            nodes,
            velocities,
            interpolation: Interpolation::Hermite,
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn start(&self) -> &Point {
        &self.nodes[0]
    }

    pub fn end(&self) -> &Point {
        self.nodes.last().unwrap()
    }

    fn locate(&self, tau: f64) -> (usize, f64, f64) {
        let n = self.times.len();
        let k = match self
            .times
            .binary_search_by(|a| a.partial_cmp(&tau).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.times[k + 1] - self.times[k];
        (k, ((tau - self.times[k]) / h).clamp(0.0, 1.0), h)
    }

    /// Position at time `tau`, clamped to the curve's span.
    pub fn position(&self, tau: f64) -> Point {
        let (k, s, h) = self.locate(tau);
        match self.interpolation {
            Interpolation::PiecewiseLinear => {
                &self.nodes[k] * (1.0 - s) + &self.nodes[k + 1] * s
            }
            Interpolation::Hermite => {
                let (h00, h10, h01, h11) = hermite_basis(s);
                &self.nodes[k] * h00
                    + &self.velocities[k] * (h10 * h)
                    + &self.nodes[k + 1] * h01
                    + &self.velocities[k + 1] * (h11 * h)
            }
        }
    }

    /// Velocity at time `tau`, clamped to the curve's span.
    pub fn velocity(&self, tau: f64) -> Point {
        let (k, s, h) = self.locate(tau);
        match self.interpolation {
            Interpolation::PiecewiseLinear => (&self.nodes[k + 1] - &self.nodes[k]) / h,
            Interpolation::Hermite => {
                let (d00, d10, d01, d11) = hermite_basis_d1(s);
                (&self.nodes[k] * d00 + &self.nodes[k + 1] * d01) / h
                    + &self.velocities[k] * d10
                    + &self.velocities[k + 1] * d11
            }
        }
    }
}

pub(crate) fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

pub(crate) fn hermite_basis_d1(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (
        6.0 * s2 - 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 2.0 * s,
    )
}

pub(crate) fn hermite_basis_d2(s: f64) -> (f64, f64, f64, f64) {
    (12.0 * s - 6.0, 6.0 * s - 4.0, -12.0 * s + 6.0, 6.0 * s - 2.0)
}

fn three_point_velocities(times: &[f64], nodes: &[Point]) -> Vec<Point> {
    let n = nodes.len();
    if n == 2 {
        let v = (&nodes[1] - &nodes[0]) / (times[1] - times[0]);
        return vec![v.clone(), v];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                let (h1, h2) = (times[1] - times[0], times[2] - times[1]);
                let d1 = (&nodes[1] - &nodes[0]) / h1;
                let d2 = (&nodes[2] - &nodes[1]) / h2;
                &d1 + (&d1 - &d2) * (h1 / (h1 + h2))
            } else if i == n - 1 {
                let (h1, h2) = (times[i - 1] - times[i - 2], times[i] - times[i - 1]);
                let d1 = (&nodes[i - 1] - &nodes[i - 2]) / h1;
                let d2 = (&nodes[i] - &nodes[i - 1]) / h2;
                &d2 + (&d2 - &d1) * (h2 / (h1 + h2))
            } else {
                let (h1, h2) = (times[i] - times[i - 1], times[i + 1] - times[i]);
                let d1 = (&nodes[i] - &nodes[i - 1]) / h1;
                let d2 = (&nodes[i + 1] - &nodes[i]) / h2;
                (d1 * h2 + d2 * h1) / (h1 + h2)
            }
        })
        .collect()
}

/// Momenta `p(τᵢ) = L_v(τᵢ, ξ(τᵢ), ξ̇(τᵢ))` along a curve.
#[derive(Clone, Debug, PartialEq)]
pub struct DualArc {
    pub times: Vec<f64>,
    pub momenta: Vec<Point>,
}

/// Dual arc of `curve` from its node velocities.
pub fn dual_arc(l: &dyn TonelliLagrangian, curve: &Curve) -> DualArc {
    let n = curve.dim();
    let momenta = curve
        .times
        .iter()
        .zip(&curve.nodes)
        .zip(&curve.velocities)
        .map(|((t, x), v)| {
            let mut p = Point::zeros(n);
            l.grad_v(*t, x.as_slice(), v.as_slice(), p.as_mut_slice());
            p
        })
        .collect();
    DualArc {
        times: curve.times.clone(),
        momenta,
    }
}

/// A converged minimizer for `A_{s,t}(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalSolution {
    pub value: f64,
    pub minimizer: Curve,
    pub dual: DualArc,
    /// `D_x A = −L_v` at the start.
    pub grad_x: Point,
    /// `D_y A = L_v` at the end.
    pub grad_y: Point,
    /// Largest Euler-Lagrange defect at the collocation points.
    pub residual: f64,
    /// Tolerance the residual was held to.
    pub tol: f64,
    /// `max |ξ̈|`, a Lipschitz constant of the velocity.
    pub velocity_lipschitz: f64,
}

impl FundamentalSolution {
    pub fn eval(&self) -> ActionEval {
        ActionEval {
            value: self.value,
            grad_x: self.grad_x.clone(),
            grad_y: self.grad_y.clone(),
        }
    }

    /// Writes `tau, x_1..x_n, p_1..p_n` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.minimizer.dim();
        let mut header = vec!["tau".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        writeln!(w, "{}", header.join(","))?;
        for ((t, x), p) in self
            .minimizer
            .times
            .iter()
            .zip(&self.minimizer.nodes)
            .zip(&self.dual.momenta)
        {
            let mut row = vec![fmt_num(*t)];
            row.extend(x.iter().map(|c| fmt_num(*c)));
            row.extend(p.iter().map(|c| fmt_num(*c)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Cone `{(t, y) : t − s < max_gap, |y − x| < slope·(t − s)}` on which the
/// gradient formulas are certified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub slope: f64,
    pub max_gap: f64,
}

impl Cone {
    pub fn contains(&self, gap: f64, distance: f64) -> bool {
        gap > 0.0 && gap < self.max_gap && distance < self.slope * gap
    }
}

/// Endpoint gradients `(D_x A, D_y A)` of a converged solution.
pub fn gradients_a(fs: &FundamentalSolution, cone: Option<&Cone>) -> Result<(Point, Point)> {
    if !(fs.residual <= fs.tol) {
        return Err(Error::NoConvergence {
            residual: fs.residual,
            tol: fs.tol,
        });
    }
    if let Some(cone) = cone {
        let gap = fs.minimizer.end_time() - fs.minimizer.start_time();
        let distance = (fs.minimizer.end() - fs.minimizer.start()).norm();
        if !cone.contains(gap, distance) {
            return Err(Error::ConeViolation {
                gap,
                distance,
                slope: cone.slope,
                max_gap: cone.max_gap,
            });
        }
    }
    Ok((fs.grad_x.clone(), fs.grad_y.clone()))
}

/// Formats a scalar with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}
