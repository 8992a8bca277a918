//! Multivalued BSDEs with jumps: penalization over increasing levels for
//! negative-valued operator families, and truncation, stopping and
//! concatenation for real-valued ones.

mod penalized;
mod unbounded;

pub use penalized::{solve_mbsde, solve_penalized, LevelRecord, PenalizationReport, PenalizationSchedule};
pub use unbounded::{solve_unbounded, stopping_times, ConcatenationRecord, OverlapStat};

use thiserror::Error;

use crate::bsde::{BsdeError, CEBackend, DriverSpec, Generator, SolveOptions, TerminalSpec};
use crate::monotone_ops::{MonotoneError, MonotoneFamily, PenalizedOperator};
use crate::scenario::{ForwardState, Scenario};

#[derive(Debug, Error)]
pub enum MbsdeError {
    #[error(transparent)]
    Bsde(#[from] BsdeError),
    #[error(transparent)]
    Operator(#[from] MonotoneError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no convergence: last delta {last_delta:.3e} above tolerance at level {level}")]
    NoConvergence { level: u64, last_delta: f64, report: PenalizationReport, solution: Box<crate::bsde::SolutionGrid> },
    #[error("Y decreased by {violation:.3e} from level {from} to {to} at path {path}, step {step}")]
    MonotonicityBreach { from: u64, to: u64, path: usize, step: usize, violation: f64 },
    #[error("levels {from} and {to} disagree on their overlap at step {step}: |mean diff| {diff:.3e} > {tolerance:.3e} (worst path {path})")]
    SegmentMismatch { from: u64, to: u64, step: usize, path: usize, diff: f64, tolerance: f64 },
}

/// The data `(ξ, f, k)` on a shared scenario.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub family: MonotoneFamily,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub scenario: &'a Scenario,
    pub backend: CEBackend,
    pub options: SolveOptions,
}

impl<'a> Problem<'a> {
    pub fn new(
        family: MonotoneFamily,
        driver: DriverSpec,
        terminal: TerminalSpec,
        scenario: &'a Scenario,
        backend: CEBackend,
    ) -> Self {
        Self { family, driver, terminal, scenario, backend, options: SolveOptions::default() }
    }

    /// `a_{t_i}` on the scenario grid.
    pub fn boundaries(&self) -> Vec<f64> {
        self.scenario.grid().times().iter().map(|&t| self.family.boundary(t).0).collect()
    }
}

/// Driver `f − k_n(t, y)`; `y`-Lipschitz with constant `C + n`, one-sided
/// constant `C`.
pub struct PenalizedDriver<'a> {
    pub base: &'a DriverSpec,
    pub op: PenalizedOperator,
}

impl Generator for PenalizedDriver<'_> {
    fn eval(&self, state: &ForwardState<'_>, y: f64, z: f64, psi: &[f64]) -> Result<f64, BsdeError> {
        Ok(self.base.eval_f(state, y, z, psi) - self.op.eval(state.t, y)?)
    }

    fn y_lipschitz(&self) -> f64 {
        self.base.lipschitz_c() + self.op.level() as f64
    }

    fn y_one_sided(&self) -> f64 {
        self.base.lipschitz_c()
    }
}

/// Driver `f − k(t, y)` for a single-valued family on all of `ℝ`.
pub struct DirectDriver<'a> {
    pub base: &'a DriverSpec,
    pub family: &'a MonotoneFamily,
}

impl Generator for DirectDriver<'_> {
    fn eval(&self, state: &ForwardState<'_>, y: f64, z: f64, psi: &[f64]) -> Result<f64, BsdeError> {
        let k = self.family.eval(state.t, y, crate::monotone_ops::Side::Right)?;
        Ok(self.base.eval_f(state, y, z, psi) - k)
    }

    fn y_lipschitz(&self) -> f64 {
        self.base.lipschitz_c() + self.family.lipschitz().unwrap_or(f64::INFINITY)
    }

    fn y_one_sided(&self) -> f64 {
        self.base.lipschitz_c()
    }
}

/// Plain BSDE with driver `f − k(t, y)`, the single-valued reduction.
pub fn solve_direct(problem: &Problem<'_>) -> Result<crate::bsde::SolutionGrid, MbsdeError> {
    let (a, _) = problem.family.boundary(0.0);
    if a.is_finite() || problem.family.lipschitz().is_none() {
        return Err(MbsdeError::Precondition(format!(
            "family '{}' must be single-valued and Lipschitz on the real line",
            problem.family.name()
        )));
    }
    let xi = problem.terminal.evaluate(problem.scenario)?;
    let gen = DirectDriver { base: &problem.driver, family: &problem.family };
    let mut sol = crate::bsde::solve_with_generator(&gen, &xi, problem.scenario, &problem.backend, &problem.options)?;
    let grid = problem.scenario.grid();
    for p in 0..sol.n_paths() {
        let mut k = 0.0;
        for i in 0..grid.n_steps() {
            k -= grid.dt(i) * problem.family.body(grid.time(i), sol.y(p, i));
            sol.set_k(p, i + 1, k);
        }
    }
    Ok(sol)
}
