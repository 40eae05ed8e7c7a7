use std::sync::Arc;

use super::{minimize_action_with, ActionEval, SolverOptions};
use crate::error::{Error, Result};
use crate::lagrangian::TonelliLagrangian;

/// Evaluates `A_{s,t}(x, y)` and its endpoint gradients, using the closed
/// form when the Lagrangian provides one and the trajectory solver otherwise.
#[derive(Clone, Debug)]
pub struct ActionKernel {
    l: Arc<dyn TonelliLagrangian>,
    opts: SolverOptions,
    closed_form: bool,
}

impl ActionKernel {
    pub fn new(l: Arc<dyn TonelliLagrangian>) -> Self {
        let n = l.dim();
        let zero = vec![0.0; n];
        let w = l.time_window();
        let (s, t) = if w.start.is_finite() {
            (w.start, w.start + 0.5 * (w.end - w.start).min(1.0))
        } else {
            (0.0, 1.0)
        };
        let closed_form = l.closed_form_action(s, t, &zero, &zero).is_some();
        Self {
            l,
            opts: SolverOptions::default(),
            closed_form,
        }
    }

    /// Always uses the trajectory solver.
    pub fn solver_only(l: Arc<dyn TonelliLagrangian>) -> Self {
        Self {
            closed_form: false,
            ..Self::new(l)
        }
    }

    pub fn with_options(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn lagrangian(&self) -> &Arc<dyn TonelliLagrangian> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn is_closed_form(&self) -> bool {
        self.closed_form
    }

    pub fn eval(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<ActionEval> {
        if self.closed_form {
            if !(s < t) {
                return Err(Error::InvalidInput(format!("need s < t, got s = {s}, t = {t}")));
            }
            let w = self.l.time_window();
            w.check(s)?;
            w.check(t)?;
            if let Some(a) = self.l.closed_form_action(s, t, x, y) {
                return Ok(a);
            }
        }
        Ok(minimize_action_with(self.l.as_ref(), s, t, x, y, &self.opts)?.eval())
    }

    pub fn value(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.eval(s, t, x, y)?.value)
    }
}
