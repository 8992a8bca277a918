use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{probe_points, BuiltProblem, ProblemConfig};
use super::CliError;
use crate::bsde::{residual_check, solve_bsde, Generator, ResidualReport, SolutionGrid, TerminalSpec, TREE_RESIDUAL_TOL};
use crate::mbsde::{solve_direct, solve_mbsde, solve_penalized, solve_unbounded, MbsdeError, Problem};
use crate::monotone_ops::{family_by_name, validate_assumptions, FamilyShape, Params, SignMode, ValidationReport};
use crate::scenario::Scenario;
use crate::verification::{
    bounds_monitor, check_comparison, check_comparison_hypotheses, check_constraint, check_skorokhod, check_uniqueness,
    corollary1_check, lemma1_check, lipschitz_remark_check, oracle_compare, solve_pair, GraphSelection, OracleMc, PropertyEntry,
    PropertyReport, VerifyError, Witness,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bsde,
    Mbsde,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Core,
    Comparison,
    NegativeControls,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SolveSummary {
    pub mode: Mode,
    pub y0: f64,
    pub y0_se: f64,
    pub k_terminal_mean: f64,
    pub levels: Vec<u64>,
}

impl SolveSummary {
    pub fn line(&self) -> String {
        format!("Y0 = {:.8} +/- {:.2e}, mean K_T = {:.8}, levels = {:?}", self.y0, self.y0_se, self.k_terminal_mean, self.levels)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub level: u64,
    pub y0: f64,
    pub delta: Option<f64>,
    pub min_slack: Option<f64>,
    pub k_terminal_mean: f64,
}

fn solver(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn mbsde_err(e: MbsdeError) -> CliError {
    match e {
        MbsdeError::Precondition(msg) => CliError::ModeMismatch(msg),
        other => solver(other),
    }
}

fn verify_err(e: VerifyError) -> CliError {
    match e {
        VerifyError::HypothesisViolated { hypothesis, detail } => CliError::Hypothesis(format!("{hypothesis}: {detail}")),
        VerifyError::Mbsde(m) => mbsde_err(m),
        other => solver(other),
    }
}

fn setup(config: &ProblemConfig) -> Result<(BuiltProblem, Scenario), CliError> {
    let built = config.build()?;
    let scenario = built.scenario(config.seed, config.n_paths).map_err(solver)?;
    Ok((built, scenario))
}

fn problem<'a>(built: &BuiltProblem, scenario: &'a Scenario) -> Problem<'a> {
    Problem::new(built.family.clone(), built.driver.clone(), built.terminal.clone(), scenario, built.backend)
}

fn single_valued(built: &BuiltProblem) -> bool {
    built.family.lipschitz().is_some() && built.grid.times().iter().all(|&t| built.family.boundary(t).0 == f64::NEG_INFINITY)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable"))?;
    Ok(())
}

/// Solves in the given mode and writes `solution.csv`, `summary.json` and,
/// when applicable, `report.json` and `concatenation.csv` under `out`.
pub fn run_solve(config: &ProblemConfig, mode: Mode, out: &Path) -> Result<SolveSummary, CliError> {
    let (built, scenario) = setup(config)?;
    fs::create_dir_all(out)?;
    let prob = problem(&built, &scenario);
    let (sol, levels) = match mode {
        Mode::Bsde => {
            if !single_valued(&built) {
                return Err(CliError::ModeMismatch(format!(
                    "mode bsde needs a single-valued Lipschitz family on the real line, '{}' is not",
                    built.family.name()
                )));
            }
            (solve_direct(&prob).map_err(mbsde_err)?, vec![])
        }
        Mode::Mbsde => {
            if built.family.sign_mode() != SignMode::NegativeValued {
                return Err(CliError::ModeMismatch(format!(
                    "mode mbsde needs a negative-valued family, '{}' is real-valued",
                    built.family.name()
                )));
            }
            match solve_mbsde(&prob, &built.schedule) {
                Ok((sol, report)) => {
                    fs::write(out.join("report.json"), report.to_json())?;
                    (sol, report.levels.iter().map(|r| r.level).collect())
                }
                Err(MbsdeError::NoConvergence { level, last_delta, report, .. }) => {
                    fs::write(out.join("report.json"), report.to_json())?;
                    return Err(solver(format!("no convergence up to level {level}, last delta {last_delta:.3e}")));
                }
                Err(e) => return Err(mbsde_err(e)),
            }
        }
        Mode::Unbounded => {
            if built.family.sign_mode() != SignMode::RealValued {
                return Err(CliError::ModeMismatch(format!(
                    "mode unbounded needs a real-valued family, '{}' is negative-valued",
                    built.family.name()
                )));
            }
            let env = built
                .envelope
                .as_ref()
                .ok_or_else(|| CliError::ModeMismatch("mode unbounded needs an [envelope] section".into()))?;
            let (sol, record) = solve_unbounded(&prob, env, &built.unbounded_levels, &built.schedule).map_err(mbsde_err)?;
            record.write_csv(fs::File::create(out.join("concatenation.csv"))?).map_err(solver)?;
            write_json(&out.join("report.json"), &record)?;
            (sol, record.levels.clone())
        }
    };
    sol.write_csv_file(&out.join("solution.csv"))?;
    let summary = SolveSummary { mode, y0: sol.y0(), y0_se: sol.y0_se(), k_terminal_mean: sol.k_terminal_mean(), levels };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn residual_entry(check: &str, rep: &ResidualReport, tree: bool) -> PropertyEntry {
    let stat = rep.steps.iter().map(|s| s.cond_mean_max).fold(0.0, f64::max);
    let tol = if tree {
        TREE_RESIDUAL_TOL
    } else {
        rep.steps.iter().map(|s| crate::verification::Z_GATE * s.se + TREE_RESIDUAL_TOL).fold(0.0, f64::max)
    };
    let failure = rep.first_failure().cloned();
    PropertyEntry::judge(check, rep.pass, stat, tol, || match failure {
        Some(s) => Witness::at(s.worst_path, s.step, format!("conditional residual mean {:.3e}", s.cond_mean_max)),
        None => Witness::note("no failing step"),
    })
}

fn residual(check: &str, sol: &SolutionGrid, gen: &dyn Generator, scenario: &Scenario) -> Result<PropertyEntry, CliError> {
    let rep = residual_check(sol, gen, scenario).map_err(solver)?;
    Ok(residual_entry(check, &rep, scenario.as_tree().is_some()))
}

fn core_suite(
    config: &ProblemConfig,
    built: &BuiltProblem,
    scenario: &Scenario,
    report: &mut PropertyReport,
) -> Result<(), CliError> {
    let v = &config.verify;
    let prob = problem(built, scenario);
    if built.family.sign_mode() == SignMode::RealValued {
        let env = built
            .envelope
            .as_ref()
            .ok_or_else(|| CliError::ModeMismatch("real-valued family needs an [envelope] section".into()))?;
        match solve_unbounded(&prob, env, &built.unbounded_levels, &built.schedule) {
            Ok((sol, rec)) => {
                let viol = rec.tau_monotone_violations as f64;
                report.push(PropertyEntry::judge("tau_monotone", viol == 0.0, viol, 0.0, || {
                    Witness::note(format!("{viol} paths"))
                }));
                let ratio = rec.overlaps.iter().map(|o| o.worst_ratio).fold(0.0, f64::max);
                report.push(PropertyEntry::judge("overlap", ratio <= 1.0, ratio, 1.0, Witness::default));
                report.push(residual("residual", &sol, &built.driver, scenario)?);
            }
            Err(MbsdeError::SegmentMismatch { from, to, step, path, diff, tolerance }) => {
                report.push(PropertyEntry::judge("overlap", false, diff, tolerance, || Witness {
                    level: Some(to),
                    ..Witness::at(path, step, format!("levels {from} and {to} disagree"))
                }));
            }
            Err(e) => return Err(mbsde_err(e)),
        }
        return Ok(());
    }

    let (sol, pen) = match solve_mbsde(&prob, &built.schedule) {
        Ok(x) => x,
        Err(MbsdeError::MonotonicityBreach { from, to, path, step, violation }) => {
            report.push(PropertyEntry::judge("penalization_monotone", false, violation, built.schedule.eps_mono, || Witness {
                level: Some(to),
                ..Witness::at(path, step, format!("Y decreased from level {from}"))
            }));
            return Ok(());
        }
        Err(e) => return Err(mbsde_err(e)),
    };
    let last = pen.last().map_or(1, |r| r.level);
    report.push(check_constraint(&sol, &built.family, v.constraint_tol));
    report.push(residual("residual", &sol, &built.driver, scenario)?);

    let other = solve_penalized(&prob, 2 * last).map_err(mbsde_err)?;
    let times = built.grid.times();
    let sup_a = times.iter().map(|&t| built.family.boundary(t).0).fold(f64::NEG_INFINITY, f64::max);
    let interior = if sup_a.is_finite() { sup_a + v.interior_offset } else { v.interior_offset };
    let mut selections = vec![GraphSelection::InteriorConstant(interior), GraphSelection::Midpoint(&other)];
    if times.iter().all(|&t| built.family.boundary(t).0.is_finite()) {
        selections.insert(1, GraphSelection::Boundary { eps: v.boundary_eps });
    }
    report.push(check_skorokhod(&sol, &built.family, &selections, v.skorokhod_tol).map_err(verify_err)?);
    report.push(lemma1_check(&sol, &other, v.skorokhod_tol).map_err(verify_err)?);
    report.push(bounds_monitor(&pen, v.bounds_factor));

    let second;
    let pb = if scenario.as_tree().is_some() {
        problem(built, scenario)
    } else {
        second = built.scenario(config.seed.wrapping_add(1), config.n_paths).map_err(solver)?;
        problem(built, &second)
    };
    report.push(check_uniqueness(&prob, &pb, &built.schedule).map_err(verify_err)?);

    if scenario.as_tree().is_some() && matches!(built.family.shape(), FamilyShape::Reflection { .. }) {
        let levels: Vec<u64> = pen.levels.iter().map(|r| r.level).collect();
        let mc = v.oracle_mc_paths.map(|n| OracleMc { n_paths: n, seed: config.seed, degree: built.grid.n_steps() });
        report.push(oracle_compare(&prob, &levels, v.oracle_tol, mc).map_err(verify_err)?.0);
    }
    if single_valued(built) {
        report.push(lipschitz_remark_check(&prob, &[last], v.lipschitz_tol).map_err(verify_err)?);
    }
    Ok(())
}

fn comparison_suite(
    config: &ProblemConfig,
    built: &BuiltProblem,
    scenario: &Scenario,
    report: &mut PropertyReport,
) -> Result<(), CliError> {
    let other = config
        .compare_problem()
        .ok_or_else(|| CliError::ModeMismatch("the comparison suite needs a [compare] section".into()))?;
    let built2 = other.build()?;
    let (p1, p2) = (problem(built, scenario), problem(&built2, scenario));
    match check_comparison(&p1, &p2, &built.schedule, config.verify.comparison_tol) {
        Ok(entry) => report.push(entry),
        Err(VerifyError::HypothesisViolated { hypothesis, detail }) => {
            let note = format!("{hypothesis}: {detail}");
            report.push(PropertyEntry::judge("comparison_hypotheses", false, f64::NAN, 0.0, || Witness::note(note)));
            return Err(CliError::Hypothesis(format!("{hypothesis}: {detail}")));
        }
        Err(e) => return Err(verify_err(e)),
    }
    let (s1, s2, _) = solve_pair(&p1, &p2, &built.schedule).map_err(verify_err)?;
    report.push(corollary1_check(&s1, &s2, config.verify.skorokhod_tol).map_err(verify_err)?);
    Ok(())
}

fn control(check: &str, detected: bool, statistic: f64, witness: Witness) -> PropertyEntry {
    PropertyEntry { check: check.into(), pass: detected, statistic, tolerance: 0.0, witness: Some(witness) }
}

fn negative_controls(built: &BuiltProblem, scenario: &Scenario, report: &mut PropertyReport) -> Result<(), CliError> {
    let mut sol = solve_bsde(&built.driver, &built.terminal, scenario, &built.backend).map_err(solver)?;
    let mid = built.grid.n_steps() / 2;
    for y in sol.y_step_mut(mid) {
        *y += 1.0;
    }
    let rep = residual_check(&sol, &built.driver, scenario).map_err(solver)?;
    let worst = rep.steps.iter().map(|s| s.cond_mean_max).fold(0.0, f64::max);
    let w = rep.first_failure().map_or_else(
        || Witness::note("corruption not detected"),
        |s| Witness::at(s.worst_path, s.step, format!("residual mean {:.3e} after shifting Y at step {mid}", s.cond_mean_max)),
    );
    report.push(control("control_residual_corruption", !rep.pass, worst, w));

    let base = built.terminal.clone();
    let raised = TerminalSpec::new("raised", move |s| base.eval(s) + 1.0);
    let mut p1 = problem(built, scenario);
    p1.terminal = raised;
    let p2 = problem(built, scenario);
    let (detected, note) = match check_comparison_hypotheses(&p1, &p2) {
        Err(VerifyError::HypothesisViolated { hypothesis, detail }) => (true, format!("{hypothesis}: {detail}")),
        Err(e) => return Err(verify_err(e)),
        Ok(()) => (false, "unordered terminals passed the hypothesis check".into()),
    };
    report.push(control("control_unordered_terminals", detected, f64::NAN, Witness::note(note)));

    let singular = family_by_name("sqrt_singular", &Params::new(), built.grid.horizon()).map_err(solver)?;
    let v = validate_assumptions(&singular, None, &built.grid, &probe_points(&singular, &built.grid));
    let b2 = v.item("B2_square_integrability").cloned();
    let (detected, stat, note) = match b2 {
        Some(item) => (!item.pass, item.statistic, item.detail),
        None => (false, f64::NAN, "no B2 item".into()),
    };
    report.push(control("control_b2_violation", detected, stat, Witness::note(format!("sqrt_singular: {note}"))));
    Ok(())
}

/// Runs a suite and always writes `verify.json` under `out`.
pub fn run_verify(config: &ProblemConfig, suite: Suite, out: &Path) -> Result<PropertyReport, CliError> {
    let (built, scenario) = setup(config)?;
    fs::create_dir_all(out)?;
    let mut report = PropertyReport::default();
    let result = match suite {
        Suite::Core => core_suite(config, &built, &scenario, &mut report),
        Suite::Comparison => comparison_suite(config, &built, &scenario, &mut report),
        Suite::NegativeControls => negative_controls(&built, &scenario, &mut report),
    };
    fs::write(out.join("verify.json"), report.to_json())?;
    result.map(|()| report)
}

/// Penalized solves per level on one scenario; writes `sweep.csv` with
/// columns `level, Y0, delta, min_slack, K_T`.
pub fn run_sweep(config: &ProblemConfig, levels: Option<&[u64]>, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    let (built, scenario) = setup(config)?;
    if built.family.sign_mode() != SignMode::NegativeValued {
        return Err(CliError::ModeMismatch("sweep needs a negative-valued family".into()));
    }
    let levels = levels.map_or_else(|| built.schedule.levels.clone(), <[u64]>::to_vec);
    if levels.is_empty() || levels.contains(&0) {
        return Err(CliError::ModeMismatch("sweep levels must be >= 1".into()));
    }
    fs::create_dir_all(out)?;
    let prob = problem(&built, &scenario);
    let bounds = prob.boundaries();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(levels.len());
    for n in levels {
        let sol = solve_penalized(&prob, n).map_err(mbsde_err)?;
        let mut slack: Option<f64> = None;
        for (i, a) in bounds.iter().enumerate().take(bounds.len() - 1).filter(|(_, a)| a.is_finite()) {
            let m = sol.y_step(i).iter().map(|y| y - a).fold(f64::INFINITY, f64::min);
            slack = Some(slack.map_or(m, |s| s.min(m)));
        }
        let delta = rows.last().map(|r| (sol.y0() - r.y0).abs());
        rows.push(SweepRow { level: n, y0: sol.y0(), delta, min_slack: slack, k_terminal_mean: sol.k_terminal_mean() });
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(solver)?;
    w.write_record(["level", "Y0", "delta", "min_slack", "K_T"]).map_err(solver)?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.17e}"));
    for r in &rows {
        w.write_record([
            r.level.to_string(),
            format!("{:.17e}", r.y0),
            opt(r.delta),
            opt(r.min_slack),
            format!("{:.17e}", r.k_terminal_mean),
        ])
        .map_err(solver)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Assumption report for the configured family; written to
/// `validation.json` when `out` is given.
pub fn run_validate(config: &ProblemConfig, out: Option<&Path>) -> Result<ValidationReport, CliError> {
    let built = config.build()?;
    let report =
        validate_assumptions(&built.family, built.envelope.as_ref(), &built.grid, &probe_points(&built.family, &built.grid));
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("validation.json"), &report)?;
    }
    Ok(report)
}
