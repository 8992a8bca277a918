use serde::Serialize;

use super::{PropertyEntry, VerifyError, Witness, EXACT_TOL, Z_GATE};
use crate::bsde::{implicit_step, CEBackend};
use crate::mbsde::{solve_penalized, Problem};
use crate::monotone_ops::FamilyShape;
use crate::scenario::Scenario;

/// Node budget for the tree oracle.
pub const ORACLE_NODE_BUDGET: usize = 1 << 22;

/// Regression run on paths sampled from the tree's own law.
#[derive(Debug, Clone, Copy)]
pub struct OracleMc {
    pub n_paths: usize,
    pub seed: u64,
    pub degree: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OracleTable {
    pub levels: Vec<u64>,
    pub tree_y0: Vec<f64>,
    /// `(Y_0, s.e.)` per level.
    pub mc_y0: Option<Vec<(f64, f64)>>,
    pub projection_y0: Option<f64>,
    /// Largest `|Y^n − V|` over all nodes at the last level.
    pub projection_gap: Option<f64>,
    /// Largest decrease of `Y` between consecutive levels over all nodes.
    pub monotonicity_violation: f64,
}

/// `V_i = max(a_{t_i}, y)` with `y = E_i[V_{i+1}] + Δ_i (f(t_i, y, Z_i, ψ_i) − c)`
/// on a tree, for `k ≡ c` on `[a_t, ∞)`. Values are `[step][path]`.
pub fn projection_recursion(problem: &Problem<'_>) -> Result<Vec<Vec<f64>>, VerifyError> {
    let FamilyShape::Reflection { level: c } = problem.family.shape() else {
        return Err(VerifyError::Precondition("projection recursion needs a reflection-type family".into()));
    };
    let sc = problem.scenario;
    let tree = sc.as_tree().ok_or_else(|| VerifyError::Precondition("projection recursion needs a tree".into()))?;
    let grid = sc.grid();
    let (paths, steps, m) = (sc.n_paths(), grid.n_steps(), sc.marks().len());
    let mut v = vec![Vec::new(); steps + 1];
    v[steps] = problem.terminal.evaluate(sc)?;
    let lip = problem.driver.lipschitz_c();
    for i in (0..steps).rev() {
        let dt = grid.dt(i);
        let next = &v[i + 1];
        let cond = tree.node_expectation(i, next);
        let zw: Vec<f64> = (0..paths).map(|p| next[p] * sc.dw(p, i)).collect();
        let z = tree.node_expectation(i, &zw);
        let psis: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let xs: Vec<f64> = (0..paths).map(|p| next[p] * sc.dn_comp(p, i, j)).collect();
                tree.node_expectation(i, &xs)
            })
            .collect();
        let b = tree.block_size(i);
        let (a, _) = problem.family.boundary(grid.time(i));
        let mut cur = vec![0.0; paths];
        for node in 0..cond.len() {
            let state = sc.state(node * b, i);
            let zn = z[node] / sc.dw_var(i);
            let psi: Vec<f64> = (0..m).map(|j| psis[j][node] / sc.dn_comp_var(i, j)).collect();
            let y = implicit_step(
                |y| Ok(problem.driver.eval_f(&state, y, zn, &psi) - c),
                cond[node],
                dt,
                lip,
                lip,
                i,
                &problem.options,
            )?;
            cur[node * b..(node + 1) * b].fill(y.max(a));
        }
        v[i] = cur;
    }
    Ok(v)
}

/// Penalized tree solutions per level against the projection value, and
/// optionally a regression solver on sampled tree paths per level.
///
/// Passes iff the tree values are nondecreasing in the level at every node,
/// the last level is within `tol` of the projection at every node (when the
/// family is reflection-type), and every Monte Carlo `Y_0` is within 4 s.e.
/// of the tree value.
pub fn oracle_compare(
    problem: &Problem<'_>,
    levels: &[u64],
    tol: f64,
    mc: Option<OracleMc>,
) -> Result<(PropertyEntry, OracleTable), VerifyError> {
    let tree = problem.scenario.as_tree().ok_or_else(|| VerifyError::Precondition("oracle needs a tree".into()))?;
    if tree.n_nodes() > ORACLE_NODE_BUDGET {
        return Err(VerifyError::BudgetExceeded { nodes: tree.n_nodes(), budget: ORACLE_NODE_BUDGET });
    }
    if levels.is_empty() {
        return Err(VerifyError::Precondition("no levels given".into()));
    }
    let steps = problem.scenario.n_steps();
    let mut tree_y0 = Vec::with_capacity(levels.len());
    let mut violation = (0.0f64, levels[0], 0, 0);
    let mut prev: Option<crate::bsde::SolutionGrid> = None;
    for &n in levels {
        let sol = solve_penalized(problem, n)?;
        tree_y0.push(sol.y0());
        if let Some(old) = &prev {
            for i in 0..=steps {
                for p in 0..sol.n_paths() {
                    let d = old.y(p, i) - sol.y(p, i);
                    if d > violation.0 {
                        violation = (d, n, p, i);
                    }
                }
            }
        }
        prev = Some(sol);
    }
    let last = prev.expect("levels nonempty");

    let (projection_y0, projection_gap, gap_at) = match problem.family.shape() {
        FamilyShape::Reflection { .. } => {
            let v = projection_recursion(problem)?;
            let mut gap = (0.0f64, 0, 0);
            for (i, row) in v.iter().enumerate() {
                for (p, x) in row.iter().enumerate() {
                    let d = (x - last.y(p, i)).abs();
                    if d > gap.0 {
                        gap = (d, p, i);
                    }
                }
            }
            (Some(v[0][0]), Some(gap.0), (gap.1, gap.2))
        }
        FamilyShape::General => (None, None, (0, 0)),
    };

    let mut mc_y0 = None;
    let mut mc_worst = (0.0f64, levels[0]);
    if let Some(cfg) = mc {
        let sampled = Scenario::from(tree.sample_paths(cfg.n_paths, cfg.seed));
        let mc_problem = Problem { scenario: &sampled, backend: CEBackend::regression(cfg.degree), ..problem.clone() };
        let mut rows = Vec::with_capacity(levels.len());
        for (l, &n) in levels.iter().enumerate() {
            let sol = solve_penalized(&mc_problem, n)?;
            let z = (sol.y0() - tree_y0[l]).abs() / sol.y0_se().max(f64::MIN_POSITIVE);
            if z > mc_worst.0 {
                mc_worst = (z, n);
            }
            rows.push((sol.y0(), sol.y0_se()));
        }
        mc_y0 = Some(rows);
    }

    let table = OracleTable {
        levels: levels.to_vec(),
        tree_y0,
        mc_y0,
        projection_y0,
        projection_gap,
        monotonicity_violation: violation.0,
    };
    let mono_ok = violation.0 <= EXACT_TOL;
    let proj_ok = projection_gap.is_none_or(|g| g <= tol);
    let mc_ok = mc_worst.0 <= Z_GATE;
    let statistic = projection_gap.unwrap_or(violation.0);
    let entry = PropertyEntry::judge("oracle", mono_ok && proj_ok && mc_ok, statistic, tol, || {
        if !mono_ok {
            Witness {
                level: Some(violation.1),
                ..Witness::at(violation.2, violation.3, format!("Y decreased by {:.3e}", violation.0))
            }
        } else if !proj_ok {
            Witness::at(gap_at.0, gap_at.1, format!("|Y - V| = {statistic:.3e} at the last level"))
        } else {
            Witness::level(mc_worst.1, format!("Monte Carlo Y0 is {:.2} s.e. from the tree", mc_worst.0))
        }
    });
    Ok((entry, table))
}
