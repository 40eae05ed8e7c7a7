use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A Newton-type inner solve (Legendre inversion, polytope minimization)
    /// exceeded its iteration cap.
    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid horizon {0}: must be positive and finite")]
    InvalidHorizon(f64),

    #[error("time {t} lies outside the certified window [{start}, {end}]")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    /// Action minimization stalled above the Euler-Lagrange tolerance.
    #[error("action minimization stalled: residual {residual:e} above tolerance {tol:e}")]
    NoConvergence { residual: f64, tol: f64 },

    #[error(
        "(t - s, |y - x|) = ({gap}, {distance}) lies outside the certified cone \
         (slope {slope}, T' = {max_gap})"
    )]
    ConeViolation {
        gap: f64,
        distance: f64,
        slope: f64,
        max_gap: f64,
    },

    #[error("search ball of radius {radius} around {center:?} leaves the grid box")]
    SearchBallClipped { center: Vec<f64>, radius: f64 },

    #[error("value iteration increment ratio {ratio} exceeds the contraction bound {bound}")]
    NonContraction { ratio: f64, bound: f64 },

    #[error("optimal foot point {foot:?} of node {node:?} left the grid box")]
    BoxExhausted { node: Vec<f64>, foot: Vec<f64> },

    #[error("start point {x:?} is singular (superdifferential diameter {diameter})")]
    SingularStart { x: Vec<f64>, diameter: f64 },

    #[error("only {found} differentiable neighbours found, need at least {needed}")]
    InsufficientSamples { found: usize, needed: usize },

    #[error("midpoint defect ratio {ratio} exceeds the declared semiconcavity bound {bound}")]
    NotSemiconcave { ratio: f64, bound: f64 },

    #[error("barrier maximizer at {x:?} is not unique for t = {t}")]
    NonUniqueMaximizer { x: Vec<f64>, t: f64 },

    #[error("point {x:?} is not singular (diameter {diameter} <= threshold {threshold})")]
    NotSingular {
        x: Vec<f64>,
        diameter: f64,
        threshold: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or domain set-up.
    Input,
    /// A solver failed to converge or contract.
    Solver,
    /// A checked mathematical property failed.
    Violation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonConvergence { .. }
            | Error::NoConvergence { .. }
            | Error::NonContraction { .. } => ErrorClass::Solver,
            Error::ConeViolation { .. }
            | Error::NotSemiconcave { .. }
            | Error::NonUniqueMaximizer { .. }
            | Error::SingularStart { .. }
            | Error::NotSingular { .. } => ErrorClass::Violation,
            Error::InvalidHorizon(_)
            | Error::OutOfWindow { .. }
            | Error::SearchBallClipped { .. }
            | Error::BoxExhausted { .. }
            | Error::InsufficientSamples { .. }
            | Error::InvalidInput(_) => ErrorClass::Input,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
