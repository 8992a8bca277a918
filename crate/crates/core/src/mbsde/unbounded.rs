use std::io::Write;

use serde::Serialize;

use super::{solve_mbsde, MbsdeError, PenalizationReport, PenalizationSchedule, Problem};
use crate::bsde::SolutionGrid;
use crate::monotone_ops::{GrowthEnvelope, SignMode};
use crate::scenario::TimeGrid;

const Z_GATE: f64 = 4.0;
const OVERLAP_FLOOR: f64 = 1e-6;

/// Per path, the first grid index `i` with `ℓ(t_i, Y^n_i) ≤ n`. The terminal
/// index always qualifies because `ℓ(T, ·) = 0`.
pub fn stopping_times(solution: &SolutionGrid, envelope: &GrowthEnvelope, n: u64, grid: &TimeGrid) -> Vec<usize> {
    let level = n as f64;
    (0..solution.n_paths())
        .map(|p| (0..=grid.n_steps()).find(|&i| envelope.eval(grid.time(i), solution.y(p, i)) <= level).unwrap_or(grid.n_steps()))
        .collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OverlapStat {
    pub from: u64,
    pub to: u64,
    /// Largest `|mean diff| / tolerance` over steps; at most 1 when the levels agree.
    pub worst_ratio: f64,
    pub max_abs_mean_diff: f64,
    pub worst_step: usize,
    /// Path-steps compared.
    pub compared: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConcatenationRecord {
    pub levels: Vec<u64>,
    /// `τ_0`, the terminal index on every path.
    pub tau0: usize,
    /// `tau[level][path]`, a grid index.
    pub tau: Vec<Vec<usize>>,
    /// `thresholds[level][i] = x_{n, t_i} = inf{x : ℓ(t_i, x) ≥ n}`.
    pub thresholds: Vec<Vec<f64>>,
    /// Index into `levels` used at `(path, step)`, stored path-major.
    pub assignment: Vec<u8>,
    pub n_steps: usize,
    /// Path-steps not covered by any level's segment; the last level is used there.
    pub uncovered: usize,
    /// Paths where `τ` increased with the level, `τ_0` included.
    pub tau_monotone_violations: usize,
    pub overlaps: Vec<OverlapStat>,
    pub reports: Vec<PenalizationReport>,
}

impl ConcatenationRecord {
    pub fn level_at(&self, path: usize, step: usize) -> u64 {
        self.levels[self.assignment[path * (self.n_steps + 1) + step] as usize]
    }

    /// CSV with columns `path, level, tau_index`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "level", "tau_index"])?;
        let paths = self.tau.first().map_or(0, |t| t.len());
        for p in 0..paths {
            w.write_record([p.to_string(), "0".into(), self.tau0.to_string()])?;
            for (l, level) in self.levels.iter().enumerate() {
                w.write_record([p.to_string(), level.to_string(), self.tau[l][p].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Truncation, stopping and concatenation for a real-valued family.
///
/// Level `n` solves `MBSDE(ξ, f − n, k∧n − n)` with the inner penalization
/// `schedule` and sets `K^n = K̂^n − n·t`. The solution at index `i` is taken
/// from the first level whose `τ_n ≤ i`; `K` is assembled from the increments
/// of the level that owns each step. Consecutive levels must agree on
/// `[τ_{n−1}, T]` within 4 standard errors per step, widened by the last
/// penalization gap of each level.
pub fn solve_unbounded(
    problem: &Problem<'_>,
    envelope: &GrowthEnvelope,
    truncation_levels: &[u64],
    schedule: &PenalizationSchedule,
) -> Result<(SolutionGrid, ConcatenationRecord), MbsdeError> {
    if problem.family.sign_mode() != SignMode::RealValued {
        return Err(MbsdeError::Precondition(format!(
            "solve_unbounded needs a real-valued family, '{}' is negative-valued",
            problem.family.name()
        )));
    }
    if truncation_levels.is_empty() || truncation_levels.windows(2).any(|w| w[1] <= w[0]) || truncation_levels[0] == 0 {
        return Err(MbsdeError::Precondition("truncation levels must be nonempty, >= 1 and strictly increasing".into()));
    }
    if truncation_levels.len() > u8::MAX as usize {
        return Err(MbsdeError::Precondition("at most 255 truncation levels".into()));
    }
    let grid = problem.scenario.grid();
    let steps = grid.n_steps();

    let mut sols = Vec::with_capacity(truncation_levels.len());
    let mut reports = Vec::with_capacity(truncation_levels.len());
    let mut tau = Vec::with_capacity(truncation_levels.len());
    let mut thresholds = Vec::with_capacity(truncation_levels.len());
    for &n in truncation_levels {
        let sub = Problem {
            family: problem.family.truncate_shift(n)?,
            driver: problem.driver.shifted(n as f64),
            terminal: problem.terminal.clone(),
            scenario: problem.scenario,
            backend: problem.backend,
            options: problem.options,
        };
        let (mut sol, report) = solve_mbsde(&sub, schedule)?;
        for i in 0..=steps {
            let shift = n as f64 * grid.time(i);
            for k in sol.k_step_mut(i) {
                *k -= shift;
            }
        }
        tau.push(stopping_times(&sol, envelope, n, grid));
        thresholds.push(grid.times().iter().map(|&t| envelope.threshold(t, n as f64)).collect());
        sols.push(sol);
        reports.push(report);
    }

    let paths = sols[0].n_paths();
    let last = truncation_levels.len() - 1;
    let tau_monotone_violations = (0..paths).filter(|&p| tau[0][p] > steps || tau.windows(2).any(|w| w[1][p] > w[0][p])).count();

    let mut overlaps = Vec::new();
    for l in 1..truncation_levels.len() {
        let (a, b) = (&sols[l - 1], &sols[l]);
        // the inner penalization stops with a bias of about its last Cauchy gap
        let bias = [&reports[l - 1], &reports[l]].iter().map(|r| r.last().and_then(|x| x.delta).unwrap_or(0.0)).sum::<f64>();
        let mut stat = OverlapStat {
            from: truncation_levels[l - 1],
            to: truncation_levels[l],
            worst_ratio: 0.0,
            max_abs_mean_diff: 0.0,
            worst_step: 0,
            compared: 0,
        };
        for i in 0..=steps {
            let idx: Vec<usize> = (0..paths).filter(|&p| i >= tau[l - 1][p]).collect();
            if idx.len() < 2 {
                continue;
            }
            stat.compared += idx.len();
            let cnt = idx.len() as f64;
            let mean = |s: &SolutionGrid| idx.iter().map(|&p| s.y(p, i)).sum::<f64>() / cnt;
            let var = |s: &SolutionGrid, m: f64| idx.iter().map(|&p| (s.y(p, i) - m).powi(2)).sum::<f64>() / (cnt - 1.0);
            let (ma, mb) = (mean(a), mean(b));
            let se = ((var(a, ma) + var(b, mb)) / cnt).sqrt();
            let diff = (ma - mb).abs();
            let tol = Z_GATE * se + bias + OVERLAP_FLOOR;
            if diff / tol > stat.worst_ratio {
                stat.worst_ratio = diff / tol;
                stat.worst_step = i;
            }
            stat.max_abs_mean_diff = stat.max_abs_mean_diff.max(diff);
            if diff > tol {
                let path = idx
                    .iter()
                    .copied()
                    .max_by(|&p, &q| (a.y(p, i) - b.y(p, i)).abs().total_cmp(&(a.y(q, i) - b.y(q, i)).abs()))
                    .unwrap_or(0);
                return Err(MbsdeError::SegmentMismatch { from: stat.from, to: stat.to, step: i, path, diff, tolerance: tol });
            }
        }
        overlaps.push(stat);
    }

    let mut out = SolutionGrid::zeros(grid.times().to_vec(), sols[0].weights().to_vec(), sols[0].n_marks());
    out.set_y0_se(sols[last].y0_se());
    let mut assignment = vec![0u8; paths * (steps + 1)];
    let mut uncovered = 0;
    for p in 0..paths {
        let mut k = 0.0;
        for i in 0..=steps {
            let l = match (0..truncation_levels.len()).find(|&l| tau[l][p] <= i) {
                Some(l) => l,
                None => {
                    uncovered += 1;
                    last
                }
            };
            assignment[p * (steps + 1) + i] = l as u8;
            let s = &sols[l];
            out.set_y(p, i, s.y(p, i));
            out.set_z(p, i, s.z(p, i));
            out.set_psi(p, i, s.psi(p, i));
            out.set_k(p, i, k);
            if i < steps {
                k += s.k(p, i + 1) - s.k(p, i);
            }
        }
    }

    let record = ConcatenationRecord {
        levels: truncation_levels.to_vec(),
        tau0: steps,
        tau,
        thresholds,
        assignment,
        n_steps: steps,
        uncovered,
        tau_monotone_violations,
        overlaps,
        reports,
    };
    Ok((out, record))
}
