use rayon::prelude::*;

use super::{BsdeError, CEBackend, DriverSpec, Generator, Projector, SolutionGrid, TerminalSpec};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Largest number of sub-steps a single grid step may be split into.
    pub substep_budget: usize,
    /// Relative tolerance of the Picard iteration.
    pub picard_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { substep_budget: 4096, picard_tol: 1e-15, max_iter: 500 }
    }
}

pub fn solve_bsde(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    scenario: &Scenario,
    backend: &CEBackend,
) -> Result<SolutionGrid, BsdeError> {
    let xi = terminal.evaluate(scenario)?;
    solve_with_generator(driver, &xi, scenario, backend, &SolveOptions::default())
}

/// Backward recursion `Y_N = ξ`,
/// `Z_i = E_i[Y_{i+1} ΔW_i] / Var ΔW_i`,
/// `ψ_i(e_j) = E_i[Y_{i+1} ΔÑ_i(e_j)] / Var ΔÑ_i(e_j)`,
/// `Y_i = E_i[Y_{i+1}] + Δ_i f(t_i, X_i, Y_i, Z_i, ψ_i)`.
///
/// On a tree every quantity at index `i` is constant on the blocks of leaves
/// below one node, so the implicit equation is solved once per node.
pub fn solve_with_generator(
    gen: &dyn Generator,
    xi: &[f64],
    scenario: &Scenario,
    backend: &CEBackend,
    opts: &SolveOptions,
) -> Result<SolutionGrid, BsdeError> {
    let grid = scenario.grid();
    let n = grid.n_steps();
    let paths = scenario.n_paths();
    let m = scenario.marks().len();
    let mut sol = SolutionGrid::zeros(grid.times().to_vec(), scenario.weights(), m);
    sol.y_step_mut(n).copy_from_slice(xi);

    for i in (0..n).rev() {
        let proj = Projector::new(backend, scenario, i)?;
        let next = sol.y_step(i + 1).to_vec();
        let mut targets = vec![next.clone(), next.iter().enumerate().map(|(p, y)| y * scenario.dw(p, i)).collect()];
        for j in 0..m {
            targets.push(next.iter().enumerate().map(|(p, y)| y * scenario.dn_comp(p, i, j)).collect());
        }
        let refs: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
        let proj = proj.project_many(&refs);
        let dt = grid.dt(i);
        let dw_var = scenario.dw_var(i);
        let dn_var: Vec<f64> = (0..m).map(|j| scenario.dn_comp_var(i, j)).collect();
        let block = scenario.block_size(i).unwrap_or(1);
        let units: Vec<usize> = (0..paths).step_by(block).collect();

        let solved: Vec<(f64, f64, Vec<f64>)> = units
            .par_iter()
            .map(|&p| {
                let z = proj[1][p] / dw_var;
                let psi: Vec<f64> = (0..m).map(|j| proj[2 + j][p] / dn_var[j]).collect();
                let state = scenario.state(p, i);
                let y = implicit_step(
                    |y| gen.eval(&state, y, z, &psi),
                    proj[0][p],
                    dt,
                    gen.y_lipschitz(),
                    gen.y_one_sided(),
                    i,
                    opts,
                )?;
                if !(y.is_finite() && z.is_finite() && psi.iter().all(|v| v.is_finite())) {
                    return Err(BsdeError::NonFinite { step: i, path: p });
                }
                Ok((y, z, psi))
            })
            .collect::<Result<_, _>>()?;

        for (u, (y, z, psi)) in solved.iter().enumerate() {
            for p in u * block..((u + 1) * block).min(paths) {
                sol.set_y(p, i, *y);
                sol.set_z(p, i, *z);
                sol.set_psi(p, i, psi);
            }
        }
    }

    if scenario.as_ensemble().is_some() && paths > 1 && n > 0 {
        let y1 = sol.y_step(1);
        let mean = y1.iter().sum::<f64>() / paths as f64;
        let var = y1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        sol.set_y0_se((var / paths as f64).sqrt());
    }
    Ok(sol)
}

/// Solves `y = c + Δ f(y)`.
///
/// Picard iteration when `Δ·L ≤ 1/2`; otherwise a bracketed root of the
/// increasing map `y − Δ f(y) − c` while `Δ·L⁺ < 1`; otherwise the step is
/// split into `⌈2Δ L⁺⌉` implicit sub-steps with `(z, ψ)` frozen.
pub fn implicit_step(
    f: impl Fn(f64) -> Result<f64, BsdeError>,
    c: f64,
    dt: f64,
    lipschitz: f64,
    one_sided: f64,
    step: usize,
    opts: &SolveOptions,
) -> Result<f64, BsdeError> {
    if dt * lipschitz <= 0.5 {
        let mut y = c;
        for _ in 0..opts.max_iter {
            let next = c + dt * f(y)?;
            if (next - y).abs() <= opts.picard_tol * (1.0 + next.abs()) {
                return Ok(next);
            }
            y = next;
        }
        return monotone_root(|y| Ok(y - dt * f(y)? - c), y, 1.0 - dt * lipschitz, step);
    }
    let push = dt * one_sided.max(0.0);
    if push < 1.0 {
        return monotone_root(|y| Ok(y - dt * f(y)? - c), c, 1.0 - push, step);
    }
    let substeps = (2.0 * push).ceil() as usize;
    if substeps > opts.substep_budget {
        return Err(BsdeError::ContractionFailure { step, dt_lip: push, substeps, budget: opts.substep_budget });
    }
    let h = dt / substeps as f64;
    let mut y = c;
    for _ in 0..substeps {
        let prev = y;
        y = monotone_root(|v| Ok(v - h * f(v)? - prev), prev, 1.0 - h * one_sided.max(0.0), step)?;
    }
    Ok(y)
}

/// Root of a continuous `g` with `g(y) − g(y') ≥ slope·(y − y')`, by false
/// position with the Illinois modification and periodic bisection.
fn monotone_root(g: impl Fn(f64) -> Result<f64, BsdeError>, start: f64, slope: f64, step: usize) -> Result<f64, BsdeError> {
    let g0 = g(start)?;
    if g0 == 0.0 {
        return Ok(start);
    }
    if !g0.is_finite() {
        return Err(BsdeError::NonFinite { step, path: 0 });
    }
    let mut dist = (g0.abs() / slope).max(f64::EPSILON * (1.0 + start.abs()));
    let (mut a, mut ga, mut b, mut gb);
    let mut tries = 0;
    if g0 < 0.0 {
        a = start;
        ga = g0;
        loop {
            b = start + dist;
            gb = g(b)?;
            if gb >= 0.0 {
                break;
            }
            a = b;
            ga = gb;
            dist *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(BsdeError::NonFinite { step, path: 0 });
            }
        }
    } else {
        b = start;
        gb = g0;
        loop {
            a = start - dist;
            ga = g(a)?;
            if ga <= 0.0 {
                break;
            }
            b = a;
            gb = ga;
            dist *= 2.0;
            tries += 1;
            if tries > 200 {
                return Err(BsdeError::NonFinite { step, path: 0 });
            }
        }
    }
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    let (mut fa, mut fb) = (ga, gb);
    let mut side = 0i8;
    for it in 0..400 {
        let width = b - a;
        if width <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        let mut x = if it % 4 == 3 { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let gx = g(x)?;
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            a = x;
            ga = gx;
            fa = gx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            gb = gx;
            fb = gx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if ga.abs() <= gb.abs() { a } else { b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, ForwardState, MarkSpace, TimeGrid};

    fn tree(n: usize, marks: &MarkSpace) -> Scenario {
        Scenario::from(build_tree(&TimeGrid::uniform(1.0, n).unwrap(), marks).unwrap())
    }

    #[test]
    fn brownian_martingale_representation() {
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let sc = tree(3, &marks);
        let sol = solve_bsde(&DriverSpec::zero(&marks), &TerminalSpec::brownian(), &sc, &CEBackend::TreeExact).unwrap();
        for p in 0..sc.n_paths() {
            for i in 0..3 {
                assert!((sol.y(p, i) - sc.state(p, i).w).abs() < 1e-12);
                assert!((sol.z(p, i) - 1.0).abs() < 1e-12);
                assert!(sol.psi(p, i)[0].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_martingale_representation() {
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let sc = tree(3, &marks);
        let sol =
            solve_bsde(&DriverSpec::zero(&marks), &TerminalSpec::compensated_poisson(0), &sc, &CEBackend::TreeExact).unwrap();
        for p in 0..sc.n_paths() {
            for i in 0..3 {
                assert!((sol.y(p, i) - sc.state(p, i).compensated[0]).abs() < 1e-12);
                assert!(sol.z(p, i).abs() < 1e-12);
                assert!((sol.psi(p, i)[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_driver_integrates() {
        let marks = MarkSpace::empty();
        let sc = tree(4, &marks);
        let term = TerminalSpec::new("sq", |s: &ForwardState<'_>| s.w * s.w);
        let sol = solve_bsde(&DriverSpec::constant(0.7, &marks), &term, &sc, &CEBackend::TreeExact).unwrap();
        // E[W_T²] = T on the binomial tree as well
        assert!((sol.y0() - (1.0 + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn linear_driver_recursion() {
        let marks = MarkSpace::empty();
        let (a, b) = (0.8, 0.3);
        for n in [4usize, 8] {
            let sc = tree(n, &marks);
            let drv = DriverSpec::affine(a, 0.0, 0.0, b, vec![], &marks).unwrap();
            let term = TerminalSpec::new("one_plus_w", |s: &ForwardState<'_>| 1.0 + s.w);
            let sol = solve_bsde(&drv, &term, &sc, &CEBackend::TreeExact).unwrap();
            // E_i[ξ] = 1 + W_i, so the implicit recursion in the mean is scalar
            let dt = 1.0 / n as f64;
            let mut v = 1.0;
            for _ in 0..n {
                v = (v + dt * b) / (1.0 - dt * a);
            }
            assert!((sol.y0() - v).abs() < 1e-12, "{} vs {v}", sol.y0());
        }
    }

    #[test]
    fn implicit_step_regimes() {
        let opts = SolveOptions::default();
        // y = 1 + 0.1·(−3y)  ⇒  y = 1/1.3
        let y = implicit_step(|y| Ok(-3.0 * y), 1.0, 0.1, 3.0, 3.0, 0, &opts).unwrap();
        assert!((y - 1.0 / 1.3).abs() < 1e-14);
        // stiff decreasing driver: root finder
        let y = implicit_step(|y| Ok(-1e6 * y.min(0.0)), -1.0, 0.5, 1e6, 0.0, 0, &opts).unwrap();
        assert!((y - (-1.0 / (1.0 + 0.5e6))).abs() < 1e-15);
        // Δ·L⁺ = 2 ⇒ four sub-steps of size 1/4, each y ← y/(1 − 1/2)
        let y = implicit_step(|y| Ok(2.0 * y), 1.0, 1.0, 2.0, 2.0, 0, &opts).unwrap();
        assert!((y - 16.0).abs() < 1e-9, "{y}");
        let tight = SolveOptions { substep_budget: 2, ..opts };
        assert!(matches!(
            implicit_step(|y| Ok(2.0 * y), 1.0, 1.0, 2.0, 2.0, 3, &tight),
            Err(BsdeError::ContractionFailure { step: 3, .. })
        ));
    }
}
