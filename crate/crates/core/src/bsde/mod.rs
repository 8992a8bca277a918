//! Discrete-time Lipschitz BSDEs with jumps, solved backward on a grid with
//! either exact tree conditional expectations or least-squares regression.

mod condexp;
mod driver;
mod residual;
mod solution;
mod solver;
mod terminal;

pub use condexp::{condexp, regression_coefficients, CEBackend, Projector};
pub use driver::{DriverSpec, Generator};
pub use residual::{residual_check, ResidualReport, ResidualStep, TREE_RESIDUAL_TOL};
pub use solution::SolutionGrid;
pub use solver::{implicit_step, solve_bsde, solve_with_generator, SolveOptions};
pub use terminal::TerminalSpec;

use thiserror::Error;

use crate::monotone_ops::MonotoneError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsdeError {
    #[error("step {step}: Δ·L = {dt_lip:.3e} needs {substeps} sub-steps, budget is {budget}")]
    ContractionFailure { step: usize, dt_lip: f64, substeps: usize, budget: usize },
    #[error("step {step}: regression normal equations are numerically singular ({detail})")]
    RegressionRankDeficiency { step: usize, detail: String },
    #[error("regression needs at least {needed} paths for {basis} basis functions, got {got}")]
    InsufficientPaths { needed: usize, basis: usize, got: usize },
    #[error("tree-exact conditional expectations need a scenario tree")]
    BackendMismatch,
    #[error("invalid driver: {0}")]
    InvalidDriver(String),
    #[error("invalid terminal condition: {0}")]
    InvalidTerminal(String),
    #[error("non-finite value at step {step}, path {path}")]
    NonFinite { step: usize, path: usize },
    #[error("export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Operator(#[from] MonotoneError),
}
