//! Executable checks of the solution properties: constraint, Skorokhod-type
//! negativity, comparison, uniqueness, tree oracles and the single-valued
//! reduction.

mod measure;
mod oracle;
mod theorems;

pub use measure::{check_skorokhod, corollary1_check, lemma1_check, GraphSelection, RealizedSelection};
pub use oracle::{oracle_compare, projection_recursion, OracleMc, OracleTable, ORACLE_NODE_BUDGET};
pub use theorems::{
    batch_means_se, check_comparison, check_comparison_hypotheses, check_uniqueness, lipschitz_remark_check, solve_constrained,
    solve_pair,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bsde::{BsdeError, SolutionGrid};
use crate::mbsde::{MbsdeError, PenalizationReport};
use crate::monotone_ops::{MonotoneError, MonotoneFamily};

/// Tolerance for quantities that are exact on a tree.
pub const EXACT_TOL: f64 = 1e-10;
/// Standard errors allowed for Monte Carlo quantities.
pub const Z_GATE: f64 = 4.0;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Mbsde(#[from] MbsdeError),
    #[error(transparent)]
    Bsde(#[from] BsdeError),
    #[error(transparent)]
    Operator(#[from] MonotoneError),
    #[error("selection '{selection}' gives ({alpha}, {beta}) outside the graph at t = {t}")]
    InvalidSelection { selection: String, t: f64, alpha: f64, beta: f64 },
    #[error("hypothesis '{hypothesis}' violated: {detail}")]
    HypothesisViolated { hypothesis: String, detail: String },
    #[error("tree has {nodes} nodes, oracle budget is {budget}")]
    BudgetExceeded { nodes: usize, budget: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u64>,
    pub note: String,
}

impl Witness {
    pub fn at(path: usize, step: usize, note: impl Into<String>) -> Self {
        Self { path: Some(path), step: Some(step), level: None, note: note.into() }
    }

    pub fn level(level: u64, note: impl Into<String>) -> Self {
        Self { path: None, step: None, level: Some(level), note: note.into() }
    }

    pub fn note(note: impl Into<String>) -> Self {
        Self { note: note.into(), ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PropertyEntry {
    pub check: String,
    pub pass: bool,
    pub statistic: f64,
    pub tolerance: f64,
    /// Present on every failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl PropertyEntry {
    /// The witness is built and kept only when the check fails.
    pub fn judge(
        check: impl Into<String>,
        pass: bool,
        statistic: f64,
        tolerance: f64,
        witness: impl FnOnce() -> Witness,
    ) -> Self {
        Self { check: check.into(), pass, statistic, tolerance, witness: (!pass).then(witness) }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PropertyReport {
    pub entries: Vec<PropertyEntry>,
}

impl PropertyReport {
    pub fn push(&mut self, entry: PropertyEntry) {
        self.entries.push(entry);
    }

    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, check: &str) -> Option<&PropertyEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("entries serialize")
    }
}

/// `min (Y_i − a_{t_i}) ≥ −tol` over paths and steps `i < N` with a finite
/// boundary. `Y_N = ξ` is data and is not checked.
pub fn check_constraint(solution: &SolutionGrid, family: &MonotoneFamily, tol: f64) -> PropertyEntry {
    let mut worst = (f64::INFINITY, 0, 0);
    for (i, &t) in solution.times()[..solution.n_steps()].iter().enumerate() {
        let (a, _) = family.boundary(t);
        if !a.is_finite() {
            continue;
        }
        for (p, y) in solution.y_step(i).iter().enumerate() {
            if y - a < worst.0 {
                worst = (y - a, p, i);
            }
        }
    }
    let (slack, p, i) = worst;
    PropertyEntry::judge("constraint", slack >= -tol, slack, tol, || Witness::at(p, i, format!("Y - a = {slack:.6e}")))
}

/// Every level's moment monitors stay within `factor` times the first level's.
pub fn bounds_monitor(report: &PenalizationReport, factor: f64) -> PropertyEntry {
    const FLOOR: f64 = 1e-12;
    let Some(first) = report.levels.first() else {
        return PropertyEntry::judge("bounds_monitor", false, f64::NAN, factor, || Witness::note("empty report"));
    };
    let monitors = |r: &crate::mbsde::LevelRecord| {
        [
            ("sup_y_second_moment", r.sup_y_second_moment),
            ("k_terminal_second_moment", r.k_terminal_second_moment),
            ("control_energy", r.control_energy),
        ]
    };
    let base = monitors(first);
    let mut worst = (0.0f64, first.level, "");
    for r in &report.levels {
        for ((name, v), (_, b)) in monitors(r).into_iter().zip(base) {
            let ratio = if !v.is_finite() {
                f64::INFINITY
            } else if b.abs() > FLOOR {
                v / b
            } else if v.abs() > FLOOR {
                f64::INFINITY
            } else {
                1.0
            };
            if ratio > worst.0 || ratio.is_nan() {
                worst = (ratio, r.level, name);
            }
        }
    }
    let (ratio, level, name) = worst;
    PropertyEntry::judge("bounds_monitor", ratio <= factor, ratio, factor, || {
        Witness::level(level, format!("{name} grew by {ratio:.3e} over the first level"))
    })
}
