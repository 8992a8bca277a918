use super::{PropertyEntry, VerifyError, Witness};
use crate::bsde::SolutionGrid;
use crate::monotone_ops::{MonotoneFamily, Side};

/// A finite family of graph-valued pairs `(α_t, β_t)` standing in for the
/// quantification over all optional selections.
#[derive(Debug, Clone, Copy)]
pub enum GraphSelection<'a> {
    /// `α ≡ x*`, `β = k(t, x*)`.
    InteriorConstant(f64),
    /// `α = a_t + eps`, `β = k(t, a_t + eps)`.
    Boundary { eps: f64 },
    /// `α = (Y + Y')/2` for a second solution `Y'`, moved onto the boundary
    /// when it falls outside the domain; `β = k(t, α)`.
    Midpoint(&'a SolutionGrid),
}

impl GraphSelection<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InteriorConstant(_) => "interior_constant",
            Self::Boundary { .. } => "boundary",
            Self::Midpoint(_) => "midpoint",
        }
    }

    pub fn realize(&self, solution: &SolutionGrid, family: &MonotoneFamily) -> Result<RealizedSelection, VerifyError> {
        let (paths, steps) = (solution.n_paths(), solution.n_steps());
        if let Self::Midpoint(other) = self {
            if other.n_paths() != paths || other.n_steps() != steps {
                return Err(VerifyError::Precondition("midpoint pairing needs solutions on the same scenario".into()));
            }
        }
        let mut alpha = vec![0.0; paths * steps];
        let mut beta = vec![0.0; paths * steps];
        for i in 0..steps {
            let t = solution.times()[i];
            let (a, a_inside) = family.boundary(t);
            for p in 0..paths {
                let x = match *self {
                    Self::InteriorConstant(x) => x,
                    Self::Boundary { eps } => a + eps,
                    Self::Midpoint(other) => {
                        let m = 0.5 * (solution.y(p, i) + other.y(p, i));
                        if !family.in_domain(t, m) && a.is_finite() && m <= a {
                            if a_inside {
                                a
                            } else {
                                a + f64::EPSILON * (1.0 + a.abs())
                            }
                        } else {
                            m
                        }
                    }
                };
                let b = family.eval(t, x, Side::Right).unwrap_or(f64::NAN);
                if !family.graph_contains(t, x, b) {
                    return Err(VerifyError::InvalidSelection { selection: self.name().into(), t, alpha: x, beta: b });
                }
                alpha[p * steps + i] = x;
                beta[p * steps + i] = b;
            }
        }
        Ok(RealizedSelection { steps, alpha, beta })
    }
}

/// Per path and step values of a selection, path-major.
#[derive(Debug, Clone)]
pub struct RealizedSelection {
    steps: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl RealizedSelection {
    pub fn alpha(&self, path: usize, step: usize) -> f64 {
        self.alpha[path * self.steps + step]
    }

    pub fn beta(&self, path: usize, step: usize) -> f64 {
        self.beta[path * self.steps + step]
    }
}

/// Largest sum over contiguous runs `[i, j]`, with the run.
fn max_run(terms: impl Iterator<Item = f64>) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    let (mut cur, mut start) = (0.0, 0);
    for (i, s) in terms.enumerate() {
        if cur <= 0.0 {
            cur = s;
            start = i;
        } else {
            cur += s;
        }
        if cur > best.0 {
            best = (cur, start, i);
        }
    }
    best
}

fn run_check(
    check: &str,
    paths: usize,
    tol: f64,
    label: &str,
    mut path_terms: impl FnMut(usize) -> (f64, usize, usize),
) -> PropertyEntry {
    let mut worst = (f64::NEG_INFINITY, 0, 0, 0);
    for p in 0..paths {
        let (s, i, j) = path_terms(p);
        if s > worst.0 {
            worst = (s, p, i, j);
        }
    }
    let (s, p, i, j) = worst;
    PropertyEntry::judge(check, s <= tol, s, tol, || Witness::at(p, i, format!("{label}sum over steps {i}..={j} is {s:.6e}")))
}

/// `Σ_{i..i'} (Y_i − α_i)((K_{i+1} − K_i) + β_i Δ_i) ≤ tol` for every path,
/// every selection and every run of grid steps.
pub fn check_skorokhod(
    solution: &SolutionGrid,
    family: &MonotoneFamily,
    selections: &[GraphSelection<'_>],
    tol: f64,
) -> Result<PropertyEntry, VerifyError> {
    let times = solution.times();
    let mut worst: Option<PropertyEntry> = None;
    for sel in selections {
        let r = sel.realize(solution, family)?;
        let label = format!("selection {}: ", sel.name());
        let e = run_check("skorokhod", solution.n_paths(), tol, &label, |p| {
            max_run((0..solution.n_steps()).map(|i| {
                let dk = solution.k(p, i + 1) - solution.k(p, i);
                (solution.y(p, i) - r.alpha(p, i)) * (dk + r.beta(p, i) * (times[i + 1] - times[i]))
            }))
        });
        if worst.as_ref().is_none_or(|w| e.statistic > w.statistic) {
            worst = Some(e);
        }
    }
    worst.ok_or_else(|| VerifyError::Precondition("no selections given".into()))
}

fn same_shape(a: &SolutionGrid, b: &SolutionGrid) -> Result<(), VerifyError> {
    if a.n_paths() != b.n_paths() || a.n_steps() != b.n_steps() {
        return Err(VerifyError::Precondition("solutions must share the scenario".into()));
    }
    Ok(())
}

/// Discrete form of `(Y¹ − Y²)(dK¹ − dK²) ≤ 0` on every run of steps.
pub fn lemma1_check(a: &SolutionGrid, b: &SolutionGrid, tol: f64) -> Result<PropertyEntry, VerifyError> {
    same_shape(a, b)?;
    Ok(run_check("lemma1_midpoint", a.n_paths(), tol, "", |p| {
        max_run((0..a.n_steps()).map(|i| {
            let d = (a.k(p, i + 1) - a.k(p, i)) - (b.k(p, i + 1) - b.k(p, i));
            (a.y(p, i) - b.y(p, i)) * d
        }))
    }))
}

/// Discrete form of `1{Y¹ > Y²}(dK¹ − dK²) ≤ 0` on every run of steps.
pub fn corollary1_check(a: &SolutionGrid, b: &SolutionGrid, tol: f64) -> Result<PropertyEntry, VerifyError> {
    same_shape(a, b)?;
    Ok(run_check("corollary1_ordering", a.n_paths(), tol, "", |p| {
        max_run((0..a.n_steps()).map(|i| {
            if a.y(p, i) > b.y(p, i) {
                (a.k(p, i + 1) - a.k(p, i)) - (b.k(p, i + 1) - b.k(p, i))
            } else {
                0.0
            }
        }))
    }))
}
