use serde::Serialize;

use super::{BsdeError, Generator, SolutionGrid};
use crate::scenario::Scenario;

/// Gate for tree solutions, where the conditional mean of the residual is
/// zero up to rounding.
pub const TREE_RESIDUAL_TOL: f64 = 1e-10;
const Z_GATE: f64 = 4.0;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResidualStep {
    pub step: usize,
    pub mean: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Largest conditional mean over tree nodes; `|mean|` on Monte Carlo paths.
    pub cond_mean_max: f64,
    pub se: f64,
    pub pass: bool,
    /// Path with the largest `|residual|` at this step.
    pub worst_path: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResidualReport {
    pub steps: Vec<ResidualStep>,
    pub pass: bool,
}

impl ResidualReport {
    pub fn first_failure(&self) -> Option<&ResidualStep> {
        self.steps.iter().find(|s| !s.pass)
    }
}

/// Per-step residual of the discrete dynamics
/// `Y_i − [Y_{i+1} + Δ_i f(t_i, Y_i, Z_i, ψ_i) − Z_i ΔW_i − Σ_j ψ_i(e_j) ΔÑ_i(e_j) + (K_{i+1} − K_i)]`.
///
/// On a tree the conditional mean at every node must be below `1e-10`; on
/// Monte Carlo paths the sample mean must lie within 4 standard errors of 0.
pub fn residual_check(solution: &SolutionGrid, driver: &dyn Generator, scenario: &Scenario) -> Result<ResidualReport, BsdeError> {
    let grid = scenario.grid();
    let paths = solution.n_paths();
    let m = solution.n_marks();
    let mut steps = Vec::with_capacity(grid.n_steps());
    for i in 0..grid.n_steps() {
        let dt = grid.dt(i);
        let mut r = Vec::with_capacity(paths);
        let mut marts = Vec::with_capacity(paths);
        for p in 0..paths {
            let state = scenario.state(p, i);
            let (y, z, psi) = (solution.y(p, i), solution.z(p, i), solution.psi(p, i));
            let f = driver.eval(&state, y, z, psi)?;
            let mart: f64 = z * scenario.dw(p, i) + (0..m).map(|j| psi[j] * scenario.dn_comp(p, i, j)).sum::<f64>();
            let dk = solution.k(p, i + 1) - solution.k(p, i);
            r.push(y - (solution.y(p, i + 1) + dt * f - mart + dk));
            marts.push(mart);
        }
        let w = solution.weights();
        let mean: f64 = r.iter().zip(w).map(|(v, w)| v * w).sum();
        let mean_abs: f64 = r.iter().zip(w).map(|(v, w)| v.abs() * w).sum();
        let (worst_path, max_abs) =
            r.iter().enumerate().map(|(p, v)| (p, v.abs())).fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (cond_mean_max, se, pass) = match scenario.as_tree() {
            Some(tree) => {
                let cm = tree.node_expectation(i, &r).into_iter().map(f64::abs).fold(0.0, f64::max);
                (cm, 0.0, cm <= TREE_RESIDUAL_TOL)
            }
            None => {
                // The fitted conditional means make the non-martingale part of
                // the sample mean exact; what remains is the sampling error of
                // the martingale increments, which the spread of `r` alone
                // understates.
                let var = sample_var(&r) + sample_var(&marts);
                let se = (var / paths as f64).sqrt();
                (mean.abs(), se, mean.abs() <= Z_GATE * se + TREE_RESIDUAL_TOL)
            }
        };
        steps.push(ResidualStep { step: i, mean, mean_abs, max_abs, cond_mean_max, se, pass, worst_path });
    }
    let pass = steps.iter().all(|s| s.pass);
    Ok(ResidualReport { steps, pass })
}

fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde, CEBackend, DriverSpec, TerminalSpec};
    use crate::scenario::{build_tree, simulate_paths, MarkSpace, TimeGrid};

    #[test]
    fn exact_tree_solution_has_zero_residual() {
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let sc = Scenario::from(build_tree(&TimeGrid::uniform(1.0, 3).unwrap(), &marks).unwrap());
        let drv = DriverSpec::affine(0.5, 0.2, 1.0, 0.1, vec![0.5], &marks).unwrap();
        let sol = solve_bsde(&drv, &TerminalSpec::brownian(), &sc, &CEBackend::TreeExact).unwrap();
        let rep = residual_check(&sol, &drv, &sc).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn regression_solution_passes_statistically() {
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let sc = Scenario::from(simulate_paths(&TimeGrid::uniform(1.0, 6).unwrap(), &marks, 10_000, 8));
        let drv = DriverSpec::zero(&marks);
        let sol = solve_bsde(&drv, &TerminalSpec::brownian(), &sc, &CEBackend::regression(2)).unwrap();
        let rep = residual_check(&sol, &drv, &sc).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn injected_fault_is_detected() {
        let marks = MarkSpace::empty();
        let sc = Scenario::from(build_tree(&TimeGrid::uniform(1.0, 6).unwrap(), &marks).unwrap());
        let drv = DriverSpec::zero(&marks);
        let mut sol = solve_bsde(&drv, &TerminalSpec::brownian(), &sc, &CEBackend::TreeExact).unwrap();
        for p in 0..sc.n_paths() {
            let v = sol.y(p, 5);
            sol.set_y(p, 5, v + 1.0);
        }
        let rep = residual_check(&sol, &drv, &sc).unwrap();
        assert!(!rep.pass);
        assert!(rep.steps[5].cond_mean_max >= 1.0 - 1e-10);
    }
}
