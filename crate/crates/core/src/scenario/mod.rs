//! Noise sources on a time grid: Brownian increments and jump counts per mark.
//!
//! Two realizations share one storage layout ([`PathStore`]):
//!
//! * [`PathEnsemble`]: Monte Carlo paths with Gaussian increments and Poisson
//!   counts, one counter-based RNG stream per path;
//! * [`ScenarioTree`]: the full finite tree with two-point Brownian steps and
//!   at most one jump per mark and step. Every root-to-leaf branch is stored as
//!   a weighted path, so conditional expectations are exact block sums.
//!
//! Compensated increments are `ΔN − c` where `c` is the exact mean of the count
//! under the sampling law (`λΔ` for Poisson, the branch probability on the
//! tree), so `Ñ` is a martingale on both.

mod check;
mod ensemble;
mod grid;
mod marks;
mod tree;

pub use check::{martingale_check, MartingaleEntry, MartingaleReport};
pub use ensemble::{simulate_paths, PathEnsemble};
pub use grid::TimeGrid;
pub use marks::MarkSpace;
pub use tree::{build_tree, build_tree_with_budget, ScenarioTree, DEFAULT_NODE_BUDGET};

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid mark space: {0}")]
    InvalidMarks(String),
    #[error("tree needs {needed} nodes, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("invalid path data: {0}")]
    InvalidPaths(String),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Forward state seen by drivers and terminal conditions at grid index `step`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardState<'a> {
    pub step: usize,
    pub t: f64,
    /// `W_t`.
    pub w: f64,
    /// Cumulative jump counts per mark.
    pub counts: &'a [u32],
    /// Cumulative compensated counts `Ñ_t(e_j)`.
    pub compensated: &'a [f64],
    pub mark_values: &'a [f64],
}

/// Increments and running levels for a set of paths, row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStore {
    n_paths: usize,
    n_steps: usize,
    n_marks: usize,
    dw: Vec<f64>,
    dn: Vec<u32>,
    dn_comp: Vec<f64>,
    w: Vec<f64>,
    counts: Vec<u32>,
    comp: Vec<f64>,
}

impl PathStore {
    /// `compensator[i * m + j]` is subtracted from the step-`i` count of mark `j`.
    pub(crate) fn from_increments(
        n_steps: usize,
        n_marks: usize,
        dw: Vec<f64>,
        dn: Vec<u32>,
        compensator: &[f64],
    ) -> Result<Self, ScenarioError> {
        if n_steps == 0 || !dw.len().is_multiple_of(n_steps) {
            return Err(ScenarioError::InvalidPaths(format!(
                "{} Brownian increments do not split into rows of {n_steps}",
                dw.len()
            )));
        }
        let n_paths = dw.len() / n_steps;
        if dn.len() != n_paths * n_steps * n_marks || compensator.len() != n_steps * n_marks {
            return Err(ScenarioError::InvalidPaths(format!(
                "expected {} jump counts and {} compensator entries, got {} and {}",
                n_paths * n_steps * n_marks,
                n_steps * n_marks,
                dn.len(),
                compensator.len()
            )));
        }
        let dn_comp: Vec<f64> = dn
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let i = (idx / n_marks.max(1)) % n_steps;
                let j = idx % n_marks.max(1);
                c as f64 - compensator[i * n_marks + j]
            })
            .collect();
        let mut w = vec![0.0; n_paths * (n_steps + 1)];
        let mut counts = vec![0u32; n_paths * (n_steps + 1) * n_marks];
        let mut comp = vec![0.0; n_paths * (n_steps + 1) * n_marks];
        for p in 0..n_paths {
            for i in 0..n_steps {
                let cur = p * (n_steps + 1) + i;
                w[cur + 1] = w[cur] + dw[p * n_steps + i];
                for j in 0..n_marks {
                    let inc = (p * n_steps + i) * n_marks + j;
                    counts[(cur + 1) * n_marks + j] = counts[cur * n_marks + j] + dn[inc];
                    comp[(cur + 1) * n_marks + j] = comp[cur * n_marks + j] + dn_comp[inc];
                }
            }
        }
        Ok(Self { n_paths, n_steps, n_marks, dw, dn, dn_comp, w, counts, comp })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_marks(&self) -> usize {
        self.n_marks
    }

    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.dw[path * self.n_steps + step]
    }

    pub fn dn(&self, path: usize, step: usize, mark: usize) -> u32 {
        self.dn[(path * self.n_steps + step) * self.n_marks + mark]
    }

    pub fn dn_comp(&self, path: usize, step: usize, mark: usize) -> f64 {
        self.dn_comp[(path * self.n_steps + step) * self.n_marks + mark]
    }

    /// Compensated increments of all marks at one step.
    pub fn dn_comp_row(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.n_steps + step) * self.n_marks;
        &self.dn_comp[base..base + self.n_marks]
    }

    pub fn w_level(&self, path: usize, step: usize) -> f64 {
        self.w[path * (self.n_steps + 1) + step]
    }

    pub fn counts(&self, path: usize, step: usize) -> &[u32] {
        let base = (path * (self.n_steps + 1) + step) * self.n_marks;
        &self.counts[base..base + self.n_marks]
    }

    pub fn compensated(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * (self.n_steps + 1) + step) * self.n_marks;
        &self.comp[base..base + self.n_marks]
    }

    fn subset(&self, paths: std::ops::Range<usize>) -> Self {
        let (n, m) = (self.n_steps, self.n_marks);
        let len = paths.len();
        Self {
            n_paths: len,
            n_steps: n,
            n_marks: m,
            dw: self.dw[paths.start * n..paths.end * n].to_vec(),
            dn: self.dn[paths.start * n * m..paths.end * n * m].to_vec(),
            dn_comp: self.dn_comp[paths.start * n * m..paths.end * n * m].to_vec(),
            w: self.w[paths.start * (n + 1)..paths.end * (n + 1)].to_vec(),
            counts: self.counts[paths.start * (n + 1) * m..paths.end * (n + 1) * m].to_vec(),
            comp: self.comp[paths.start * (n + 1) * m..paths.end * (n + 1) * m].to_vec(),
        }
    }

    fn write_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "step".to_string(), "dW".to_string()];
        header.extend((1..=self.n_marks).map(|j| format!("dN_{j}")));
        wtr.write_record(&header)?;
        for p in 0..self.n_paths {
            for i in 0..self.n_steps {
                let mut row = vec![p.to_string(), i.to_string(), self.dw(p, i).to_string()];
                row.extend((0..self.n_marks).map(|j| self.dn(p, i, j).to_string()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Either realization of the noise, as consumed by the solvers.
#[derive(Debug, Clone)]
pub enum Scenario {
    Ensemble(PathEnsemble),
    Tree(ScenarioTree),
}

impl Scenario {
    fn store(&self) -> &PathStore {
        match self {
            Scenario::Ensemble(e) => e.store(),
            Scenario::Tree(t) => t.store(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            Scenario::Ensemble(e) => e.grid(),
            Scenario::Tree(t) => t.grid(),
        }
    }

    pub fn marks(&self) -> &MarkSpace {
        match self {
            Scenario::Ensemble(e) => e.marks(),
            Scenario::Tree(t) => t.marks(),
        }
    }

    pub fn as_tree(&self) -> Option<&ScenarioTree> {
        match self {
            Scenario::Tree(t) => Some(t),
            Scenario::Ensemble(_) => None,
        }
    }

    pub fn as_ensemble(&self) -> Option<&PathEnsemble> {
        match self {
            Scenario::Ensemble(e) => Some(e),
            Scenario::Tree(_) => None,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.store().n_paths()
    }

    pub fn n_steps(&self) -> usize {
        self.store().n_steps()
    }

    /// Probability weight of a path; weights sum to one.
    pub fn weight(&self, path: usize) -> f64 {
        match self {
            Scenario::Ensemble(e) => 1.0 / e.n_paths() as f64,
            Scenario::Tree(t) => t.weight(path),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.weight(p)).collect()
    }

    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.store().dw(path, step)
    }

    pub fn dn(&self, path: usize, step: usize, mark: usize) -> u32 {
        self.store().dn(path, step, mark)
    }

    pub fn dn_comp(&self, path: usize, step: usize, mark: usize) -> f64 {
        self.store().dn_comp(path, step, mark)
    }

    pub fn dn_comp_row(&self, path: usize, step: usize) -> &[f64] {
        self.store().dn_comp_row(path, step)
    }

    /// Exact variance of `ΔW_i` under the sampling law.
    pub fn dw_var(&self, step: usize) -> f64 {
        self.grid().dt(step)
    }

    /// Exact variance of the compensated increment of mark `j` at step `i`.
    pub fn dn_comp_var(&self, step: usize, mark: usize) -> f64 {
        match self {
            Scenario::Ensemble(e) => e.dn_comp_var(step, mark),
            Scenario::Tree(t) => t.dn_comp_var(step, mark),
        }
    }

    pub fn state(&self, path: usize, step: usize) -> ForwardState<'_> {
        let s = self.store();
        ForwardState {
            step,
            t: self.grid().time(step),
            w: s.w_level(path, step),
            counts: s.counts(path, step),
            compensated: s.compensated(path, step),
            mark_values: self.marks().values(),
        }
    }

    pub fn terminal_state(&self, path: usize) -> ForwardState<'_> {
        self.state(path, self.n_steps())
    }

    /// Size of the groups of consecutive paths that share the same information
    /// at `step` (tree nodes); `None` for Monte Carlo paths.
    pub fn block_size(&self, step: usize) -> Option<usize> {
        self.as_tree().map(|t| t.block_size(step))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScenarioError> {
        let file = std::fs::File::create(path)?;
        self.store().write_csv(std::io::BufWriter::new(file))
    }
}

impl From<PathEnsemble> for Scenario {
    fn from(e: PathEnsemble) -> Self {
        Scenario::Ensemble(e)
    }
}

impl From<ScenarioTree> for Scenario {
    fn from(t: ScenarioTree) -> Self {
        Scenario::Tree(t)
    }
}
