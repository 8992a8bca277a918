use std::fmt;
use std::sync::Arc;

use super::BsdeError;
use crate::scenario::{ForwardState, Scenario};

type TerminalFn = Arc<dyn Fn(&ForwardState<'_>) -> f64 + Send + Sync>;

/// Terminal condition `ξ = g(W_T, N_T, marks)`.
#[derive(Clone)]
pub struct TerminalSpec {
    name: String,
    g: TerminalFn,
    lower_bound: Option<f64>,
}

impl fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalSpec").field("name", &self.name).field("lower_bound", &self.lower_bound).finish_non_exhaustive()
    }
}

impl TerminalSpec {
    pub fn new(name: impl Into<String>, g: impl Fn(&ForwardState<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), g: Arc::new(g), lower_bound: None }
    }

    /// `ξ = W_T`.
    pub fn brownian() -> Self {
        Self::new("brownian", |s| s.w)
    }

    /// `ξ = Ñ_T(e_mark)`.
    pub fn compensated_poisson(mark: usize) -> Self {
        Self::new("compensated_poisson", move |s| s.compensated[mark])
    }

    /// Require every sampled `ξ ≥ a_T − 1e-12`.
    pub fn with_lower_bound(mut self, a_t: f64) -> Self {
        self.lower_bound = Some(a_t);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lower_bound(&self) -> Option<f64> {
        self.lower_bound
    }

    pub fn eval(&self, state: &ForwardState<'_>) -> f64 {
        (self.g)(state)
    }

    /// `ξ` on every path of the scenario.
    pub fn evaluate(&self, scenario: &Scenario) -> Result<Vec<f64>, BsdeError> {
        let xi: Vec<f64> = (0..scenario.n_paths()).map(|p| self.eval(&scenario.terminal_state(p))).collect();
        if let Some(p) = xi.iter().position(|v| !v.is_finite()) {
            return Err(BsdeError::InvalidTerminal(format!("non-finite value on path {p}")));
        }
        if let Some(a) = self.lower_bound {
            if let Some(p) = xi.iter().position(|&v| v < a - 1e-12) {
                return Err(BsdeError::InvalidTerminal(format!("xi = {} below the terminal boundary {a} on path {p}", xi[p])));
            }
        }
        let second: f64 = xi.iter().enumerate().map(|(p, v)| scenario.weight(p) * v * v).sum();
        if !second.is_finite() {
            return Err(BsdeError::InvalidTerminal("second moment overflows".into()));
        }
        Ok(xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, MarkSpace, TimeGrid};

    #[test]
    fn lower_bound_is_checked() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let sc = Scenario::from(build_tree(&grid, &MarkSpace::empty()).unwrap());
        assert!(TerminalSpec::brownian().with_lower_bound(0.0).evaluate(&sc).is_err());
        let shifted = TerminalSpec::new("plus", |s| s.w.max(0.0) + 1.0).with_lower_bound(0.0);
        assert!(shifted.evaluate(&sc).unwrap().iter().all(|&v| v >= 1.0));
    }
}
