use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MbsdeError, PenalizedDriver, Problem};
use crate::bsde::{solve_with_generator, SolutionGrid};
use crate::monotone_ops::SignMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizationSchedule {
    pub levels: Vec<u64>,
    /// Stop once `sup_i mean_p |Y^{next}_i − Y^{prev}_i|` drops below this.
    pub stop_tolerance: f64,
    /// Allowed pathwise decrease of `Y` between consecutive levels.
    pub eps_mono: f64,
    pub max_level: u64,
}

impl PenalizationSchedule {
    /// Levels `1, 2, 4, …, 2^p`.
    pub fn powers_of_two(p: u32, stop_tolerance: f64, eps_mono: f64) -> Self {
        Self { levels: (0..=p).map(|k| 1u64 << k).collect(), stop_tolerance, eps_mono, max_level: 1u64 << p }
    }

    pub fn validate(&self) -> Result<(), MbsdeError> {
        if self.levels.is_empty() || self.levels[0] == 0 {
            return Err(MbsdeError::Precondition("levels must be nonempty and start at >= 1".into()));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MbsdeError::Precondition("levels must be strictly increasing".into()));
        }
        if !(self.stop_tolerance > 0.0) {
            return Err(MbsdeError::Precondition("stop_tolerance must be > 0".into()));
        }
        if !(self.eps_mono >= 0.0) {
            return Err(MbsdeError::Precondition("eps_mono must be >= 0".into()));
        }
        Ok(())
    }

    pub fn active_levels(&self) -> impl Iterator<Item = u64> + '_ {
        self.levels.iter().copied().filter(move |&n| n <= self.max_level)
    }
}

impl Default for PenalizationSchedule {
    fn default() -> Self {
        Self::powers_of_two(10, 1e-3, 1e-8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: u64,
    pub y0: f64,
    pub y0_se: f64,
    /// `sup_i mean_p |Y^n_i − Y^{prev}_i|`; absent at the first level.
    pub delta: Option<f64>,
    /// `max (Y^{prev} − Y^n)^+` over paths and steps.
    pub monotonicity_violation: f64,
    /// `min (Y^n_i − a_{t_i})`; absent when the boundary is `−∞` throughout.
    pub constraint_slack: Option<f64>,
    pub k_terminal_mean: f64,
    pub sup_y_second_moment: f64,
    pub control_energy: f64,
    pub k_terminal_second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PenalizationReport {
    pub levels: Vec<LevelRecord>,
    pub converged: bool,
}

impl PenalizationReport {
    pub fn last(&self) -> Option<&LevelRecord> {
        self.levels.last()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Penalized equation at level `n`: driver `f − k_n(t, y)` and
/// `K^n_{i+1} = K^n_i − Δ_i k_n(t_i, Y^n_i)`.
pub fn solve_penalized(problem: &Problem<'_>, n: u64) -> Result<SolutionGrid, MbsdeError> {
    if n == 0 {
        return Err(MbsdeError::Precondition("penalization level must be >= 1".into()));
    }
    let op = problem.family.penalized(n);
    let xi = problem.terminal.evaluate(problem.scenario)?;
    let gen = PenalizedDriver { base: &problem.driver, op: op.clone() };
    let mut sol = solve_with_generator(&gen, &xi, problem.scenario, &problem.backend, &problem.options)?;
    let grid = problem.scenario.grid();
    let steps = grid.n_steps();
    let paths = sol.n_paths();
    let k_paths: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut k = Vec::with_capacity(steps);
            let mut acc = 0.0;
            for i in 0..steps {
                acc -= grid.dt(i) * op.eval(grid.time(i), sol.y(p, i))?;
                k.push(acc);
            }
            Ok(k)
        })
        .collect::<Result<_, crate::monotone_ops::MonotoneError>>()?;
    for (p, k) in k_paths.iter().enumerate() {
        for (i, &v) in k.iter().enumerate() {
            sol.set_k(p, i + 1, v);
        }
    }
    Ok(sol)
}

fn level_record(problem: &Problem<'_>, level: u64, sol: &SolutionGrid, prev: Option<&SolutionGrid>) -> LevelRecord {
    let bounds = problem.boundaries();
    let paths = sol.n_paths();
    let steps = sol.n_steps();
    let constraint_slack = if bounds.iter().any(|a| a.is_finite()) {
        let mut slack = f64::INFINITY;
        for (i, a) in bounds.iter().enumerate().take(steps) {
            if a.is_finite() {
                for &y in sol.y_step(i) {
                    slack = slack.min(y - a);
                }
            }
        }
        Some(slack)
    } else {
        None
    };
    let (delta, violation) = match prev {
        Some(prev) => {
            let mut delta = 0.0f64;
            let mut violation = 0.0f64;
            for i in 0..=steps {
                let (cur, old) = (sol.y_step(i), prev.y_step(i));
                delta = delta.max(sol.mean(cur.iter().zip(old).map(|(a, b)| (a - b).abs())));
                for p in 0..paths {
                    violation = violation.max(old[p] - cur[p]);
                }
            }
            (Some(delta), violation)
        }
        None => (None, 0.0),
    };
    LevelRecord {
        level,
        y0: sol.y0(),
        y0_se: sol.y0_se(),
        delta,
        monotonicity_violation: violation,
        constraint_slack,
        k_terminal_mean: sol.k_terminal_mean(),
        sup_y_second_moment: sol.sup_y_second_moment(),
        control_energy: sol.control_energy(problem.scenario.marks().intensities()),
        k_terminal_second_moment: sol.k_terminal_second_moment(),
    }
}

fn breach_witness(prev: &SolutionGrid, cur: &SolutionGrid) -> (usize, usize) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..=cur.n_steps() {
        for p in 0..cur.n_paths() {
            let d = prev.y(p, i) - cur.y(p, i);
            if d > best.2 {
                best = (p, i, d);
            }
        }
    }
    (best.0, best.1)
}

/// Penalized solves over the schedule on one shared scenario, checking that
/// `Y` increases with the level, until successive levels agree to
/// `stop_tolerance`.
pub fn solve_mbsde(
    problem: &Problem<'_>,
    schedule: &PenalizationSchedule,
) -> Result<(SolutionGrid, PenalizationReport), MbsdeError> {
    if problem.family.sign_mode() != SignMode::NegativeValued {
        return Err(MbsdeError::Precondition(format!(
            "solve_mbsde needs a negative-valued family, '{}' is real-valued",
            problem.family.name()
        )));
    }
    schedule.validate()?;
    let mut report = PenalizationReport::default();
    let mut prev: Option<(u64, SolutionGrid)> = None;
    for level in schedule.active_levels() {
        let sol = solve_penalized(problem, level)?;
        let rec = level_record(problem, level, &sol, prev.as_ref().map(|p| &p.1));
        if let Some((from, old)) = &prev {
            if rec.monotonicity_violation > schedule.eps_mono {
                let (path, step) = breach_witness(old, &sol);
                return Err(MbsdeError::MonotonicityBreach {
                    from: *from,
                    to: level,
                    path,
                    step,
                    violation: rec.monotonicity_violation,
                });
            }
        }
        let done = rec.delta.is_some_and(|d| d < schedule.stop_tolerance);
        report.levels.push(rec);
        prev = Some((level, sol));
        if done {
            report.converged = true;
            break;
        }
    }
    let (level, sol) = prev.expect("schedule has at least one level");
    if !report.converged {
        let last_delta = report.last().and_then(|r| r.delta).unwrap_or(f64::INFINITY);
        return Err(MbsdeError::NoConvergence { level, last_delta, report, solution: Box::new(sol) });
    }
    Ok((sol, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{CEBackend, DriverSpec, TerminalSpec};
    use crate::monotone_ops::{family_by_name, Params};
    use crate::scenario::{build_tree, MarkSpace, Scenario, TimeGrid};

    fn tree(n: usize) -> Scenario {
        Scenario::from(build_tree(&TimeGrid::uniform(1.0, n).unwrap(), &MarkSpace::empty()).unwrap())
    }

    fn family(name: &str) -> crate::monotone_ops::MonotoneFamily {
        family_by_name(name, &Params::new(), 1.0).unwrap()
    }

    /// Independent projection recursion `V_i = max(0, E_i[V_{i+1}])` on the
    /// binomial tree, by explicit enumeration of the recombining lattice.
    fn snell_oracle(n: usize) -> f64 {
        let s = (1.0 / n as f64).sqrt();
        let mut v: Vec<f64> = (0..=n).map(|up| (2.0 * up as f64 - n as f64) * s).collect();
        for i in (0..n).rev() {
            v = (0..=i).map(|up| (0.5 * (v[up] + v[up + 1])).max(0.0)).collect();
        }
        v[0]
    }

    #[test]
    fn slack_constraint_is_inactive() {
        let sc = tree(4);
        let term = TerminalSpec::new("plus", |s| s.w.max(0.0) + 1.0);
        let prob = Problem::new(family("reflect_at"), DriverSpec::zero(&MarkSpace::empty()), term, &sc, CEBackend::TreeExact);
        for n in [1, 64] {
            let sol = solve_penalized(&prob, n).unwrap();
            assert_eq!(sol.k_terminal_mean(), 0.0);
            assert!(sol.y_step(0)[0] >= 1.0);
        }
        let (sol, rep) = solve_mbsde(&prob, &PenalizationSchedule::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.levels.len(), 2);
        assert_eq!(sol.k_terminal_mean(), 0.0);
    }

    #[test]
    fn constant_family_adds_unit_drift() {
        let sc = tree(4);
        let term = TerminalSpec::new("zero", |_| 0.0);
        let prob = Problem::new(family("constant"), DriverSpec::zero(&MarkSpace::empty()), term, &sc, CEBackend::TreeExact);
        let sol = solve_penalized(&prob, 3).unwrap();
        for i in 0..=4 {
            assert!((sol.y(0, i) - (1.0 - i as f64 / 4.0)).abs() < 1e-12);
        }
        assert!((sol.k_terminal_mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_approaches_snell_oracle() {
        let sc = tree(3);
        let prob = Problem::new(
            family("reflect_at"),
            DriverSpec::zero(&MarkSpace::empty()),
            TerminalSpec::brownian(),
            &sc,
            CEBackend::TreeExact,
        );
        let oracle = snell_oracle(3);
        let sol = solve_penalized(&prob, 1 << 10).unwrap();
        assert!((sol.y0() - oracle).abs() < 1e-2, "{} vs {oracle}", sol.y0());
        let (sol, rep) = solve_mbsde(&prob, &PenalizationSchedule::powers_of_two(12, 1e-3, 1e-10)).unwrap();
        assert!(rep.converged);
        assert!(sol.y0() >= 0.0);
        assert!((sol.y0() - oracle).abs() < 2e-2);
        assert!(sol.k_terminal_mean() > 0.0);
        assert!(sol.min_k_increment() >= 0.0);
        for w in rep.levels.windows(2) {
            assert!(w[1].y0 >= w[0].y0 - 1e-12);
        }
    }

    #[test]
    fn real_valued_family_is_rejected() {
        let sc = tree(2);
        let prob = Problem::new(
            family("linear_decay"),
            DriverSpec::zero(&MarkSpace::empty()),
            TerminalSpec::brownian(),
            &sc,
            CEBackend::TreeExact,
        );
        assert!(matches!(solve_mbsde(&prob, &PenalizationSchedule::default()), Err(MbsdeError::Precondition(_))));
    }

    #[test]
    fn schedule_validation() {
        let mut s = PenalizationSchedule::default();
        assert!(s.validate().is_ok());
        s.levels = vec![1, 4, 2];
        assert!(s.validate().is_err());
        let s = PenalizationSchedule { stop_tolerance: 0.0, ..Default::default() };
        assert!(s.validate().is_err());
    }
}
