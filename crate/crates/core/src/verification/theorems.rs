use super::{PropertyEntry, VerifyError, Witness, EXACT_TOL, Z_GATE};
use crate::bsde::{DriverSpec, SolutionGrid};
use crate::mbsde::{solve_direct, solve_mbsde, solve_penalized, PenalizationSchedule, Problem};
use crate::monotone_ops::{midpoint_integral, Side, SignMode};
use crate::scenario::Scenario;

const HYP_TOL: f64 = 1e-12;
const BATCHES: usize = 10;
const Y_SAMPLES: [f64; 5] = [-2.0, -0.5, 0.0, 0.5, 2.0];
const Z_SAMPLES: [f64; 3] = [-1.0, 0.0, 1.0];
const PSI_SAMPLES: [f64; 3] = [-0.5, 0.0, 0.5];
const X_OFFSETS: [f64; 7] = [0.0, 1e-3, 0.1, 0.5, 1.0, 2.0, 5.0];
const X_FREE: [f64; 9] = [-5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0];

fn violated(hypothesis: &str, detail: String) -> VerifyError {
    VerifyError::HypothesisViolated { hypothesis: hypothesis.into(), detail }
}

/// Solve with the penalization schedule; only negative-valued families.
pub fn solve_constrained(problem: &Problem<'_>, schedule: &PenalizationSchedule) -> Result<SolutionGrid, VerifyError> {
    Ok(solve_mbsde(problem, schedule)?.0)
}

/// Both problems through the schedule, then the one that stopped earlier is
/// re-solved at the other's final level so both carry the same penalization.
/// Returns the common level last.
pub fn solve_pair(
    p1: &Problem<'_>,
    p2: &Problem<'_>,
    schedule: &PenalizationSchedule,
) -> Result<(SolutionGrid, SolutionGrid, u64), VerifyError> {
    let (s1, r1) = solve_mbsde(p1, schedule)?;
    let (s2, r2) = solve_mbsde(p2, schedule)?;
    let level = |r: &crate::mbsde::PenalizationReport| r.last().map_or(0, |x| x.level);
    let (n1, n2) = (level(&r1), level(&r2));
    Ok(match n1.cmp(&n2) {
        std::cmp::Ordering::Less => (solve_penalized(p1, n2)?, s2, n2),
        std::cmp::Ordering::Greater => (s1, solve_penalized(p2, n1)?, n1),
        std::cmp::Ordering::Equal => (s1, s2, n1),
    })
}

fn sampled_paths(scenario: &Scenario) -> Vec<usize> {
    let n = scenario.n_paths();
    let stride = (n / 16).max(1);
    (0..n).step_by(stride).collect()
}

fn check_drivers(f1: &DriverSpec, f2: &DriverSpec, scenario: &Scenario) -> Result<(), VerifyError> {
    for (name, d) in [("f1", f1), ("f2", f2)] {
        if !d.is_gamma_form() {
            return Err(violated("gamma_form", format!("{name} ('{}') is not in gamma form", d.name())));
        }
    }
    let m = scenario.marks().len();
    for p in sampled_paths(scenario) {
        for i in 0..scenario.n_steps() {
            let state = scenario.state(p, i);
            for &y in &Y_SAMPLES {
                for &z in &Z_SAMPLES {
                    for &q in &PSI_SAMPLES {
                        let psi = vec![q; m];
                        let (a, b) = (f1.eval_f(&state, y, z, &psi), f2.eval_f(&state, y, z, &psi));
                        if !(a <= b + HYP_TOL) {
                            return Err(violated(
                                "driver_order",
                                format!("path {p}, step {i}, (y, z, psi) = ({y}, {z}, {q}): f1 = {a} > f2 = {b}"),
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// The comparison hypotheses on samples: `ξ¹ ≤ ξ²` on every path, `f¹ ≤ f²`
/// on sampled tuples, `a¹ ≤ a²` and `k₁ ≥ k₂` on sampled domain points.
pub fn check_comparison_hypotheses(p1: &Problem<'_>, p2: &Problem<'_>) -> Result<(), VerifyError> {
    let (x1, x2) = (p1.terminal.evaluate(p1.scenario)?, p2.terminal.evaluate(p2.scenario)?);
    if let Some(p) = (0..x1.len()).find(|&p| !(x1[p] <= x2[p] + HYP_TOL)) {
        return Err(violated("terminal_order", format!("path {p}: xi1 = {} > xi2 = {}", x1[p], x2[p])));
    }
    check_drivers(&p1.driver, &p2.driver, p1.scenario)?;
    let grid = p1.scenario.grid();
    let horizon = grid.horizon();
    for &t in grid.times() {
        let (a1, _) = p1.family.boundary(t);
        let (a2, _) = p2.family.boundary(t);
        if !(a1 <= a2 + HYP_TOL) {
            return Err(violated("boundary_order", format!("t = {t}: a1 = {a1} > a2 = {a2}")));
        }
        if t >= horizon {
            continue;
        }
        let base = a1.max(a2);
        let xs: Vec<f64> = if base.is_finite() { X_OFFSETS.iter().map(|d| base + d).collect() } else { X_FREE.to_vec() };
        for x in xs {
            if !(p1.family.in_domain(t, x) && p2.family.in_domain(t, x)) {
                continue;
            }
            let (Ok(k1), Ok(k2)) = (p1.family.eval(t, x, Side::Right), p2.family.eval(t, x, Side::Right)) else {
                continue;
            };
            if !(k1 >= k2 - HYP_TOL) {
                return Err(violated("operator_order", format!("t = {t}, x = {x}: k1 = {k1} < k2 = {k2}")));
            }
        }
    }
    Ok(())
}

/// Solves both problems on their shared scenario at a common level and counts `(path, step)`
/// with `Y¹ > Y² + tol`. A tree allows no violation, Monte Carlo paths 1%.
pub fn check_comparison(
    p1: &Problem<'_>,
    p2: &Problem<'_>,
    schedule: &PenalizationSchedule,
    tol: f64,
) -> Result<PropertyEntry, VerifyError> {
    if !std::ptr::eq(p1.scenario, p2.scenario) {
        return Err(VerifyError::Precondition("comparison needs one shared scenario".into()));
    }
    check_comparison_hypotheses(p1, p2)?;
    let (s1, s2, _) = solve_pair(p1, p2, schedule)?;
    let allowed = if p1.scenario.as_tree().is_some() { 0.0 } else { 0.01 };
    let mut count = 0usize;
    let mut worst = (f64::NEG_INFINITY, 0, 0);
    for i in 0..=s1.n_steps() {
        for p in 0..s1.n_paths() {
            let gap = s1.y(p, i) - s2.y(p, i);
            if gap > tol {
                count += 1;
            }
            if gap > worst.0 {
                worst = (gap, p, i);
            }
        }
    }
    let frac = count as f64 / (s1.n_paths() * (s1.n_steps() + 1)) as f64;
    Ok(PropertyEntry::judge("comparison", frac <= allowed, frac, allowed, || {
        Witness::at(worst.1, worst.2, format!("Y1 - Y2 = {:.6e}, {count} violations", worst.0))
    }))
}

/// Standard error of `Y_0` at penalization level `n` from batch means: the
/// paths are cut into `batches` contiguous blocks, each block is solved on its
/// own, and the spread of the block estimates is scaled by `1/√batches`.
/// A full re-solve per block carries the regression coefficient error that a
/// one-step spread with fixed fitted values misses. Zero on a tree.
pub fn batch_means_se(problem: &Problem<'_>, n: u64, batches: usize) -> Result<f64, VerifyError> {
    let Some(ens) = problem.scenario.as_ensemble() else {
        return Ok(0.0);
    };
    let b = batches.max(2);
    let size = ens.n_paths() / b;
    if size < 2 {
        return Ok(f64::INFINITY);
    }
    let mut means = Vec::with_capacity(b);
    for j in 0..b {
        let sc = Scenario::from(ens.subset(j * size..(j + 1) * size));
        let sub = Problem { scenario: &sc, ..problem.clone() };
        means.push(solve_penalized(&sub, n)?.y0());
    }
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok((var / b as f64).sqrt())
}

/// Two independent solves of the same data. Exact backends must agree to
/// `1e-10`; otherwise within 4 combined batch-means standard errors.
pub fn check_uniqueness(
    pa: &Problem<'_>,
    pb: &Problem<'_>,
    schedule: &PenalizationSchedule,
) -> Result<PropertyEntry, VerifyError> {
    let (sa, sb, level) = solve_pair(pa, pb, schedule)?;
    let sea = batch_means_se(pa, level, BATCHES)?;
    let seb = batch_means_se(pb, level, BATCHES)?;
    let tol = Z_GATE * (sea * sea + seb * seb).sqrt() + EXACT_TOL;
    let diff = (sa.y0() - sb.y0()).abs();
    Ok(PropertyEntry::judge("uniqueness", diff <= tol, diff, tol, || {
        Witness::at(0, 0, format!("Y0 = {} vs {}", sa.y0(), sb.y0()))
    }))
}

/// Single-valued Lipschitz case: the penalized solutions at `levels` against
/// the plain BSDE with driver `f − k(t, y)`. The statistic is the `Y_0` gap
/// at the last level.
pub fn lipschitz_remark_check(problem: &Problem<'_>, levels: &[u64], tol: f64) -> Result<PropertyEntry, VerifyError> {
    let fam = &problem.family;
    let Some(lip) = fam.lipschitz() else {
        return Err(violated("lipschitz", format!("family '{}' declares no Lipschitz constant", fam.name())));
    };
    if fam.sign_mode() != SignMode::NegativeValued {
        return Err(VerifyError::Precondition("the penalized route needs a negative-valued family".into()));
    }
    let Some(&last) = levels.last() else {
        return Err(VerifyError::Precondition("no levels given".into()));
    };
    let grid = problem.scenario.grid();
    let xs: Vec<f64> = (-27..=27).map(|j| j as f64 * 0.37).collect();
    for &t in grid.times().iter().filter(|&&t| t < grid.horizon()) {
        let (a, _) = fam.boundary(t);
        if a.is_finite() {
            return Err(violated("domain", format!("t = {t}: boundary {a} is finite")));
        }
        let ks: Vec<f64> = xs.iter().map(|&x| fam.eval(t, x, Side::Right)).collect::<Result<_, _>>()?;
        for u in 0..xs.len() {
            for v in u + 1..xs.len() {
                let bound = lip * (xs[v] - xs[u]) * (1.0 + 1e-9) + HYP_TOL;
                if (ks[v] - ks[u]).abs() > bound {
                    return Err(violated(
                        "lipschitz",
                        format!("t = {t}: |k({}) - k({})| = {} > {bound}", xs[v], xs[u], (ks[v] - ks[u]).abs()),
                    ));
                }
            }
        }
    }
    let q = midpoint_integral(grid, |s| fam.eval(s, 0.0, Side::Right).unwrap_or(f64::NAN).powi(2));
    if q.divergent {
        return Err(violated("square_integrability", "integral of k(s, 0)^2 diverges".into()));
    }
    let direct = solve_direct(problem)?;
    let mut gap = f64::NAN;
    for &n in levels {
        gap = (solve_penalized(problem, n)?.y0() - direct.y0()).abs();
    }
    Ok(PropertyEntry::judge("lipschitz_remark", gap <= tol, gap, tol, || {
        Witness::level(last, format!("penalized and direct Y0 differ by {gap:.6e}"))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{CEBackend, TerminalSpec};
    use crate::monotone_ops::{family_by_name, Params};
    use crate::scenario::{build_tree, simulate_paths, MarkSpace, TimeGrid};

    fn tree(n: usize) -> Scenario {
        Scenario::from(build_tree(&TimeGrid::uniform(1.0, n).unwrap(), &MarkSpace::empty()).unwrap())
    }

    fn fam(name: &str, params: &[(&str, f64)]) -> crate::monotone_ops::MonotoneFamily {
        let p: Params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        family_by_name(name, &p, 1.0).unwrap()
    }

    fn sched() -> PenalizationSchedule {
        PenalizationSchedule::powers_of_two(12, 1e-3, 1e-10)
    }

    #[test]
    fn shifted_terminal_is_ordered_on_tree() {
        let sc = tree(4);
        let m = MarkSpace::empty();
        let low = TerminalSpec::new("w-0.5", |s| s.w - 0.5);
        let p1 = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), low, &sc, CEBackend::TreeExact);
        let p2 = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &sc, CEBackend::TreeExact);
        let e = check_comparison(&p1, &p2, &sched(), 1e-8).unwrap();
        assert!(e.pass, "{e:?}");
        assert!(matches!(check_comparison(&p2, &p1, &sched(), 1e-8), Err(VerifyError::HypothesisViolated { .. })));
    }

    #[test]
    fn ordered_operators_on_tree() {
        let sc = tree(4);
        let m = MarkSpace::empty();
        let p1 = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &sc, CEBackend::TreeExact);
        let p2 = Problem::new(
            fam("reflect_at", &[("c", -1.0)]),
            DriverSpec::zero(&m),
            TerminalSpec::brownian(),
            &sc,
            CEBackend::TreeExact,
        );
        assert!(check_comparison(&p1, &p2, &sched(), 1e-8).unwrap().pass);
        assert!(matches!(
            check_comparison(&p2, &p1, &sched(), 1e-8),
            Err(VerifyError::HypothesisViolated { hypothesis, .. }) if hypothesis == "operator_order"
        ));
    }

    #[test]
    fn comparison_needs_shared_scenario() {
        let (a, b) = (tree(2), tree(2));
        let m = MarkSpace::empty();
        let p1 = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &a, CEBackend::TreeExact);
        let p2 = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &b, CEBackend::TreeExact);
        assert!(matches!(check_comparison(&p1, &p2, &sched(), 0.0), Err(VerifyError::Precondition(_))));
    }

    #[test]
    fn batch_means_se_matches_plain_se_for_martingale() {
        let m = MarkSpace::empty();
        let sc = Scenario::from(simulate_paths(&TimeGrid::uniform(1.0, 2).unwrap(), &m, 4000, 3));
        let p = Problem::new(
            fam("constant", &[("c", 0.0)]),
            DriverSpec::zero(&m),
            TerminalSpec::brownian(),
            &sc,
            CEBackend::regression(1),
        );
        let se = batch_means_se(&p, 1, 10).unwrap();
        // Y_0 = mean of W_1: se ≈ sqrt(1 / 4000)
        let expect = (1.0f64 / 4000.0).sqrt();
        assert!(se > 0.3 * expect && se < 3.0 * expect, "{se} vs {expect}");
    }

    #[test]
    fn constant_family_agrees_at_every_level() {
        let sc = tree(5);
        let m = MarkSpace::empty();
        let p = Problem::new(fam("constant", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &sc, CEBackend::TreeExact);
        let e = lipschitz_remark_check(&p, &[1], 1e-12).unwrap();
        assert!(e.pass, "{e:?}");
        let bad = Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&m), TerminalSpec::brownian(), &sc, CEBackend::TreeExact);
        assert!(matches!(lipschitz_remark_check(&bad, &[1], 1e-2), Err(VerifyError::HypothesisViolated { .. })));
    }
}
