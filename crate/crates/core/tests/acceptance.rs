//! Acceptance criteria 1–10. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line; exits nonzero if any fails.

use std::time::{Duration, Instant};

use mbsdej::bsde::{residual_check, solve_bsde, CEBackend, DriverSpec, TerminalSpec};
use mbsdej::mbsde::{solve_direct, solve_mbsde, solve_penalized, solve_unbounded, PenalizationSchedule, Problem};
use mbsdej::monotone_ops::{envelope_by_name, family_by_name, validate_assumptions, MonotoneFamily, Params, Side};
use mbsdej::scenario::{build_tree, simulate_paths, MarkSpace, Scenario, TimeGrid};
use mbsdej::verification::{
    check_comparison, check_constraint, check_skorokhod, check_uniqueness, lemma1_check, oracle_compare, GraphSelection,
    VerifyError,
};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

fn fam(name: &str, params: &[(&str, f64)]) -> MonotoneFamily {
    let p: Params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    family_by_name(name, &p, 1.0).unwrap()
}

fn tree(n: usize, marks: &MarkSpace) -> Scenario {
    Scenario::from(build_tree(&TimeGrid::uniform(1.0, n).unwrap(), marks).unwrap())
}

fn ensemble(n: usize, paths: usize, seed: u64) -> Scenario {
    Scenario::from(simulate_paths(&TimeGrid::uniform(1.0, n).unwrap(), &MarkSpace::empty(), paths, seed))
}

fn c1_closed_form() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..10 {
        let n = 1u64 << (2 * i);
        for j in 0..10 {
            let a = -2.0 + 0.45 * j as f64;
            let f = fam("reflect_at", &[("a", a)]);
            let op = f.penalized(n);
            for k in 0..10 {
                let x = a - 3.0 + 0.61 * k as f64;
                let got = op.eval(0.3, x).map_err(|e| e.to_string())?;
                worst = worst.max((got - n as f64 * (x - a).min(0.0)).abs());
            }
        }
    }
    Ok((worst <= 1e-9, format!("max |error| {worst:.2e} over 1000 triples")))
}

fn c2_approximation() -> Outcome {
    let families = [
        ("constant", fam("constant", &[("c", -1.0)])),
        ("min_zero", fam("min_zero", &[])),
        ("neg_exp", fam("neg_exp", &[])),
        ("reflect_at", fam("reflect_at", &[])),
    ];
    let xs: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
    let top = 1u64 << 20;
    let (mut mono, mut lip, mut gap, mut off) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    let t = 0.5;
    for (_, f) in &families {
        for e in 0..=20 {
            let n = 1u64 << e;
            let (op, next) = (f.penalized(n), f.penalized(2 * n));
            for w in xs.windows(2) {
                let (k0, k1) = (op.eval(t, w[0]).map_err(|e| e.to_string())?, op.eval(t, w[1]).map_err(|e| e.to_string())?);
                lip = lip.max((k1 - k0).abs() / (n as f64 * (w[1] - w[0])) - 1.0);
                if e < 20 {
                    mono = mono.max((next.eval(t, w[0]).map_err(|e| e.to_string())? - k0) / (1.0 + k0.abs()));
                }
            }
        }
        // k_n − k ≈ −k·k'/n, so the 1e-6 gap at 2^20 holds where |k·k'| ≤ 1
        let op = f.penalized(top);
        for x in (0..=30).map(|i| 0.1 * i as f64) {
            let kn = op.eval(t, x).map_err(|e| e.to_string())?;
            gap = gap.max((kn - f.eval(t, x, Side::Right).map_err(|e| e.to_string())?).abs());
        }
        for x in [-1.0, -1.5, -2.0, -3.0] {
            if !f.in_domain(t, x) {
                off = off.max(op.eval(t, x).map_err(|e| e.to_string())?);
            }
        }
    }
    let pass = mono <= 1e-9 && lip <= 1e-9 && gap <= 1e-6 && off < -1e6;
    Ok((
        pass,
        format!("relative increase in n {mono:.1e}, Lipschitz excess {lip:.1e}, gap at 2^20 {gap:.2e}, largest off-domain value {off:.3e}"),
    ))
}

fn c3_representation() -> Outcome {
    let marks = MarkSpace::single(1.0, 1.0).unwrap();
    let sc = tree(6, &marks);
    let drv = DriverSpec::zero(&marks);
    let sw = solve_bsde(&drv, &TerminalSpec::brownian(), &sc, &CEBackend::TreeExact).map_err(|e| e.to_string())?;
    let sn = solve_bsde(&drv, &TerminalSpec::compensated_poisson(0), &sc, &CEBackend::TreeExact).map_err(|e| e.to_string())?;
    let (mut ez, mut ep) = (0.0f64, 0.0f64);
    for p in 0..sc.n_paths() {
        for i in 0..6 {
            ez = ez.max((sw.z(p, i) - 1.0).abs());
            ep = ep.max((sn.psi(p, i)[0] - 1.0).abs());
        }
    }
    Ok((ez <= 1e-10 && ep <= 1e-10, format!("max |Z-1| {ez:.1e}, max |psi-1| {ep:.1e}")))
}

fn c4_single_valued() -> Outcome {
    let marks = MarkSpace::empty();
    let sc = tree(8, &marks);
    let p = Problem::new(fam("min_zero", &[]), DriverSpec::zero(&marks), TerminalSpec::brownian(), &sc, CEBackend::TreeExact);
    let pen = solve_penalized(&p, 1 << 10).map_err(|e| e.to_string())?.y0();
    let direct = solve_direct(&p).map_err(|e| e.to_string())?.y0();
    let d = (pen - direct).abs();
    Ok((d <= 1e-2, format!("Y0 penalized {pen:.6} vs direct {direct:.6}, |diff| {d:.2e}")))
}

fn reflected(sc: &Scenario, backend: CEBackend) -> Problem<'_> {
    let marks = sc.marks().clone();
    Problem::new(fam("reflect_at", &[]), DriverSpec::zero(&marks), TerminalSpec::brownian(), sc, backend)
}

fn c5_reflected_oracle() -> Outcome {
    let sc = tree(6, &MarkSpace::empty());
    let p = reflected(&sc, CEBackend::TreeExact);
    let levels: Vec<u64> = (0..=10).map(|k| 1 << k).collect();
    let (entry, table) = oracle_compare(&p, &levels, 2e-2, None).map_err(|e| e.to_string())?;
    let sol = solve_penalized(&p, 1 << 10).map_err(|e| e.to_string())?;
    let slack = check_constraint(&sol, &p.family, 5e-2);
    Ok((
        entry.pass && slack.pass,
        format!(
            "tree Y0 {:.6} -> projection {:.6}, node gap {:.2e}, level decrease {:.1e}, min slack {:.2e}",
            table.tree_y0.last().unwrap(),
            table.projection_y0.unwrap_or(f64::NAN),
            table.projection_gap.unwrap_or(f64::NAN),
            table.monotonicity_violation,
            slack.statistic
        ),
    ))
}

/// Shifted terminal, dominated driver and ordered operators on one scenario.
fn comparison_variations(
    sc: &Scenario,
    backend: CEBackend,
    sched: &PenalizationSchedule,
) -> Result<Vec<(String, f64, bool)>, String> {
    let marks = sc.marks().clone();
    let base = reflected(sc, backend);
    let shifted = Problem { terminal: TerminalSpec::new("w_plus_half", |s| s.w + 0.5), ..base.clone() };
    let dominated = Problem { driver: DriverSpec::constant(0.5, &marks), ..base.clone() };
    let weaker = Problem { family: fam("min_zero", &[]), ..base.clone() };
    let mut out = Vec::new();
    for (name, p1, p2) in [("shifted xi", &base, &shifted), ("dominated f", &base, &dominated), ("ordered k", &weaker, &base)] {
        let e = check_comparison(p1, p2, sched, 1e-8).map_err(|e| e.to_string())?;
        out.push((name.to_string(), e.statistic, e.pass));
    }
    Ok(out)
}

fn c6_comparison() -> Outcome {
    let sc = tree(6, &MarkSpace::empty());
    let tree_rows = comparison_variations(&sc, CEBackend::TreeExact, &PenalizationSchedule::powers_of_two(13, 1e-3, 1e-8))?;
    let ens = ensemble(6, 10_000, 21);
    let mc_rows = comparison_variations(&ens, CEBackend::regression(2), &PenalizationSchedule::powers_of_two(11, 2e-3, 5e-2))?;
    let pass = tree_rows.iter().all(|r| r.2 && r.1 == 0.0) && mc_rows.iter().all(|r| r.2 && r.1 <= 0.01);
    let fmt = |rows: &[(String, f64, bool)]| rows.iter().map(|r| format!("{} {:.4}", r.0, r.1)).collect::<Vec<_>>().join(", ");
    Ok((pass, format!("tree violation fractions [{}]; regression [{}]", fmt(&tree_rows), fmt(&mc_rows))))
}

fn c7_uniqueness() -> Outcome {
    let sc = tree(6, &MarkSpace::empty());
    let p = reflected(&sc, CEBackend::TreeExact);
    let sched = PenalizationSchedule::powers_of_two(13, 1e-3, 1e-8);
    let t = check_uniqueness(&p, &p, &sched).map_err(|e| e.to_string())?;
    let (ea, eb) = (ensemble(6, 10_000, 1), ensemble(6, 10_000, 2));
    let (pa, pb) = (reflected(&ea, CEBackend::regression(2)), reflected(&eb, CEBackend::regression(2)));
    let r = check_uniqueness(&pa, &pb, &PenalizationSchedule::powers_of_two(11, 2e-3, 5e-2)).map_err(|e| e.to_string())?;
    Ok((
        t.pass && t.statistic == 0.0 && r.pass,
        format!("tree |dY0| {:.1e}; regression |dY0| {:.3e} vs 4 combined s.e. {:.3e}", t.statistic, r.statistic, r.tolerance),
    ))
}

fn c8_skorokhod() -> Outcome {
    let sc = tree(6, &MarkSpace::empty());
    let p = reflected(&sc, CEBackend::TreeExact);
    let (sol, rep) = solve_mbsde(&p, &PenalizationSchedule::powers_of_two(13, 1e-3, 1e-8)).map_err(|e| e.to_string())?;
    let last = rep.last().map_or(1, |r| r.level);
    let other = solve_penalized(&p, 2 * last).map_err(|e| e.to_string())?;
    let mut worst = Vec::new();
    let selections =
        [GraphSelection::InteriorConstant(0.5), GraphSelection::Boundary { eps: 1e-3 }, GraphSelection::Midpoint(&other)];
    let mut pass = true;
    for sel in selections {
        let name = sel.name();
        let e = check_skorokhod(&sol, &p.family, &[sel], 5e-2).map_err(|e| e.to_string())?;
        pass &= e.pass;
        worst.push(format!("{name} {:.2e}", e.statistic));
    }
    let l1 = lemma1_check(&sol, &other, 5e-2).map_err(|e| e.to_string())?;
    Ok((pass && l1.pass, format!("worst subinterval sums [{}]; lemma 1 {:.2e}", worst.join(", "), l1.statistic)))
}

fn c9_extension() -> Outcome {
    let sc = ensemble(10, 10_000, 9);
    let env = envelope_by_name("decay", &Params::new(), 1.0).unwrap();
    let drv = DriverSpec::zero(&MarkSpace::empty());
    let p = Problem::new(fam("linear_decay", &[]), drv.clone(), TerminalSpec::brownian(), &sc, CEBackend::regression(3));
    let levels: Vec<u64> = (1..=16).collect();
    let (sol, rec) =
        solve_unbounded(&p, &env, &levels, &PenalizationSchedule::powers_of_two(18, 1e-3, 1e-6)).map_err(|e| e.to_string())?;
    let res = residual_check(&sol, &drv, &sc).map_err(|e| e.to_string())?;
    let worst = rec.overlaps.iter().map(|o| o.worst_ratio).fold(0.0, f64::max);
    let pass = rec.tau0 == sc.n_steps() && rec.tau_monotone_violations == 0 && res.pass;
    Ok((
        pass,
        format!(
            "tau violations {}, {} overlaps agree (largest diff/tolerance {worst:.3}), {} uncovered cells, residual {}",
            rec.tau_monotone_violations,
            rec.overlaps.len(),
            rec.uncovered,
            if res.pass { "pass" } else { "fail" }
        ),
    ))
}

fn c10_negative_controls() -> Outcome {
    let marks = MarkSpace::empty();
    let sc = tree(6, &marks);
    let drv = DriverSpec::zero(&marks);
    let mut sol = solve_bsde(&drv, &TerminalSpec::brownian(), &sc, &CEBackend::TreeExact).map_err(|e| e.to_string())?;
    for p in 0..sc.n_paths() {
        let v = sol.y(p, 3);
        sol.set_y(p, 3, v + 1.0);
    }
    let corrupted = !residual_check(&sol, &drv, &sc).map_err(|e| e.to_string())?.pass;
    let p2 = reflected(&sc, CEBackend::TreeExact);
    let p1 = Problem { terminal: TerminalSpec::new("w_plus_one", |s| s.w + 1.0), ..p2.clone() };
    let unordered =
        matches!(check_comparison(&p1, &p2, &PenalizationSchedule::default(), 1e-8), Err(VerifyError::HypothesisViolated { .. }));
    let sing = fam("sqrt_singular", &[]);
    let v = validate_assumptions(&sing, None, sc.grid(), &[-1.0, 0.0, 1.0]);
    let flagged = v.item("B2_square_integrability").is_some_and(|i| !i.pass);
    Ok((
        corrupted && unordered && flagged,
        format!("corrupted residual caught {corrupted}, unordered terminals raise HypothesisViolated {unordered}, B2 flagged {flagged}"),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("penalization closed form", c1_closed_form, 1),
        ("approximation lemma", c2_approximation, 10),
        ("martingale representation", c3_representation, 1),
        ("single-valued reduction", c4_single_valued, 30),
        ("reflected-problem oracle", c5_reflected_oracle, 60),
        ("comparison", c6_comparison, 120),
        ("uniqueness", c7_uniqueness, 120),
        ("Skorokhod-type negativity", c8_skorokhod, 60),
        ("truncation and concatenation", c9_extension, 300),
        ("negative controls", c10_negative_controls, 30),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let in_time = took < Duration::from_secs(limit);
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {} {:.2}s (limit {limit}s): {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
