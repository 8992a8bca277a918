use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BsdeError;
use crate::scenario::Scenario;

/// Paths per partial sum; fixed so that reductions do not depend on the
/// number of worker threads.
const CHUNK: usize = 1024;
/// Default ridge, relative to the mean diagonal of the Gram matrix.
const DEFAULT_RIDGE_SCALE: f64 = 1e-8;
/// Pivot floor, relative to the largest Gram diagonal, below which the
/// factorization is declared singular.
const PIVOT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CEBackend {
    TreeExact,
    /// Polynomials of total degree `degree` in the standardized forward state
    /// `(W_t, N_t(e_1), …)`. `ridge = None` selects `1e-8 · trace(G)/p`.
    Regression {
        degree: usize,
        ridge: Option<f64>,
    },
}

impl CEBackend {
    pub fn regression(degree: usize) -> Self {
        CEBackend::Regression { degree, ridge: None }
    }

    /// Number of basis functions for `n_marks` marks.
    pub fn basis_size(&self, n_marks: usize) -> usize {
        match *self {
            CEBackend::TreeExact => 0,
            CEBackend::Regression { degree, .. } => exponents(1 + n_marks, degree).len(),
        }
    }
}

/// All exponent tuples of `vars` variables with total degree `≤ degree`,
/// ordered by degree; the first is the constant.
fn exponents(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    let mut frontier = vec![vec![0u32; vars]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // raise only variables at or after the last nonzero one, so each
            // tuple is produced once
            let start = e.iter().rposition(|&x| x > 0).unwrap_or(0);
            for v in start..vars {
                let mut f = e.clone();
                f[v] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Weighted least squares `min Σ_p w_p (v_p − φ_p·β)² + ρ|β_{1..}|²` on a fixed
/// design, factored once and reused for several right-hand sides. The first
/// column is the intercept and is not penalized.
#[derive(Debug, Clone)]
struct LeastSquares {
    p: usize,
    design: Vec<f64>,
    weights: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl LeastSquares {
    fn fit(step: usize, design: Vec<f64>, p: usize, weights: &[f64], ridge: Option<f64>) -> Result<Self, BsdeError> {
        let parts: Vec<Vec<f64>> = design
            .par_chunks(CHUNK * p)
            .zip(weights.par_chunks(CHUNK))
            .map(|(rows, w)| {
                let mut g = vec![0.0; p * p];
                for (row, &wp) in rows.chunks(p).zip(w) {
                    for a in 0..p {
                        let ra = row[a] * wp;
                        for b in a..p {
                            g[a * p + b] += ra * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut g = DMatrix::<f64>::zeros(p, p);
        for part in &parts {
            for a in 0..p {
                for b in a..p {
                    g[(a, b)] += part[a * p + b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let max_diag = (0..p).map(|a| g[(a, a)]).fold(0.0, f64::max);
        let rho = ridge.unwrap_or(DEFAULT_RIDGE_SCALE * g.trace() / p as f64);
        for a in 1..p {
            g[(a, a)] += rho;
        }
        let chol = g.cholesky().ok_or_else(|| BsdeError::RegressionRankDeficiency {
            step,
            detail: format!("Cholesky failed with ridge {rho:.3e}"),
        })?;
        let min_pivot = (0..p).map(|a| chol.l_dirty()[(a, a)].powi(2)).fold(f64::INFINITY, f64::min);
        if !(min_pivot > PIVOT_FLOOR * max_diag) {
            return Err(BsdeError::RegressionRankDeficiency {
                step,
                detail: format!("pivot {min_pivot:.3e} against diagonal {max_diag:.3e}"),
            });
        }
        Ok(Self { p, design, weights: weights.to_vec(), chol })
    }

    fn coefficients(&self, values: &[&[f64]]) -> Vec<DVector<f64>> {
        let p = self.p;
        let k = values.len();
        let parts: Vec<Vec<f64>> = self
            .design
            .par_chunks(CHUNK * p)
            .zip(self.weights.par_chunks(CHUNK))
            .enumerate()
            .map(|(c, (rows, w))| {
                let mut b = vec![0.0; k * p];
                for (r, (row, &wp)) in rows.chunks(p).zip(w).enumerate() {
                    let path = c * CHUNK + r;
                    for (v, vals) in values.iter().enumerate() {
                        let s = vals[path] * wp;
                        for a in 0..p {
                            b[v * p + a] += s * row[a];
                        }
                    }
                }
                b
            })
            .collect();
        (0..k)
            .map(|v| {
                let mut rhs = DVector::<f64>::zeros(p);
                for part in &parts {
                    for a in 0..p {
                        rhs[a] += part[v * p + a];
                    }
                }
                self.chol.solve(&rhs)
            })
            .collect()
    }

    fn predict(&self, coef: &DVector<f64>) -> Vec<f64> {
        self.design.par_chunks(self.p).map(|row| row.iter().zip(coef.iter()).map(|(x, b)| x * b).sum()).collect()
    }
}

/// `E[· | F_{t_i}]` at one grid index, prepared once and applied to several
/// per-path vectors.
#[derive(Debug, Clone)]
pub struct Projector {
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Tree { block: usize, weights: Vec<f64> },
    Regression(LeastSquares),
}

impl Projector {
    pub fn new(backend: &CEBackend, scenario: &Scenario, step: usize) -> Result<Self, BsdeError> {
        match *backend {
            CEBackend::TreeExact => {
                let tree = scenario.as_tree().ok_or(BsdeError::BackendMismatch)?;
                Ok(Self { kind: Kind::Tree { block: tree.block_size(step), weights: tree.weights().to_vec() } })
            }
            CEBackend::Regression { degree, ridge } => {
                let m = scenario.marks().len();
                let basis = backend.basis_size(m);
                let paths = scenario.n_paths();
                if paths < 10 * basis {
                    return Err(BsdeError::InsufficientPaths { needed: 10 * basis, basis, got: paths });
                }
                let weights = scenario.weights();
                let raw: Vec<Vec<f64>> = (0..paths)
                    .map(|p| {
                        let s = scenario.state(p, step);
                        std::iter::once(s.w).chain(s.counts.iter().map(|&c| c as f64)).collect()
                    })
                    .collect();
                let vars = 1 + m;
                let mut scaling = Vec::new();
                for v in 0..vars {
                    let mu: f64 = raw.iter().zip(&weights).map(|(r, w)| r[v] * w).sum();
                    let var: f64 = raw.iter().zip(&weights).map(|(r, w)| (r[v] - mu).powi(2) * w).sum();
                    let sd = var.sqrt();
                    if sd > 1e-12 * (1.0 + mu.abs()) {
                        scaling.push((v, mu, sd));
                    }
                }
                let exps = exponents(scaling.len(), degree);
                let p = exps.len();
                let design: Vec<f64> = raw
                    .par_iter()
                    .flat_map_iter(|r| {
                        let z: Vec<f64> = scaling.iter().map(|&(v, mu, sd)| (r[v] - mu) / sd).collect();
                        exps.iter()
                            .map(move |e| e.iter().zip(&z).map(|(&k, x)| x.powi(k as i32)).product::<f64>())
                            .collect::<Vec<f64>>()
                    })
                    .collect();
                Ok(Self { kind: Kind::Regression(LeastSquares::fit(step, design, p, &weights, ridge)?) })
            }
        }
    }

    /// Conditional expectations of each vector, returned per path.
    pub fn project_many(&self, values: &[&[f64]]) -> Vec<Vec<f64>> {
        match &self.kind {
            Kind::Tree { block, weights } => values
                .iter()
                .map(|vals| {
                    let mut out = Vec::with_capacity(vals.len());
                    for (v, w) in vals.chunks(*block).zip(weights.chunks(*block)) {
                        let mass: f64 = w.iter().sum();
                        let e = v.iter().zip(w).map(|(x, p)| x * p).sum::<f64>() / mass;
                        out.extend(std::iter::repeat_n(e, v.len()));
                    }
                    out
                })
                .collect(),
            Kind::Regression(ls) => ls.coefficients(values).iter().map(|c| ls.predict(c)).collect(),
        }
    }

    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.project_many(&[values]).pop().expect("one vector")
    }
}

/// `E[values | F_{t_step}]` per path.
pub fn condexp(backend: &CEBackend, scenario: &Scenario, step: usize, values: &[f64]) -> Result<Vec<f64>, BsdeError> {
    Ok(Projector::new(backend, scenario, step)?.project(values))
}

/// Ordinary least-squares coefficients of `y` on the raw monomials
/// `1, x, …, x^degree` (no ridge, equal weights).
pub fn regression_coefficients(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>, BsdeError> {
    let p = degree + 1;
    let design: Vec<f64> = x.iter().flat_map(|&v| (0..p).map(move |k| v.powi(k as i32))).collect();
    let w = vec![1.0 / x.len() as f64; x.len()];
    let ls = LeastSquares::fit(0, design, p, &w, Some(0.0))?;
    Ok(ls.coefficients(&[y]).remove(0).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, simulate_paths, MarkSpace, TimeGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exponent_counts() {
        assert_eq!(exponents(2, 2).len(), 6);
        assert_eq!(exponents(3, 3).len(), 20);
        assert_eq!(exponents(1, 4).len(), 5);
        assert_eq!(exponents(0, 3).len(), 1);
        let e = exponents(2, 3);
        let mut sorted = e.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), e.len());
    }

    #[test]
    fn constants_are_reproduced() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let tree = Scenario::from(build_tree(&grid, &marks).unwrap());
        let ens = Scenario::from(simulate_paths(&grid, &marks, 2000, 1));
        for (sc, be) in [(&tree, CEBackend::TreeExact), (&ens, CEBackend::regression(2))] {
            for step in 0..=3 {
                let v = vec![2.5; sc.n_paths()];
                for e in condexp(&be, sc, step, &v).unwrap() {
                    assert!((e - 2.5).abs() < 1e-9, "{e}");
                }
            }
        }
    }

    #[test]
    fn tree_backend_needs_tree() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let ens = Scenario::from(simulate_paths(&grid, &MarkSpace::empty(), 100, 1));
        assert_eq!(condexp(&CEBackend::TreeExact, &ens, 0, &[0.0; 100]).unwrap_err(), BsdeError::BackendMismatch);
    }

    #[test]
    fn tree_leaf_indicator() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let tree = build_tree(&grid, &MarkSpace::single(1.0, 1.0).unwrap()).unwrap();
        let probs = tree.child_probabilities(1);
        let sc = Scenario::from(tree);
        let ind: Vec<f64> = (0..16).map(|l| (l == 9) as u8 as f64).collect();
        let e = condexp(&CEBackend::TreeExact, &sc, 1, &ind).unwrap();
        assert!((e[9] - probs[1]).abs() < 1e-15);
        assert!(e[..8].iter().all(|&v| v == 0.0));
    }

    /// Closed-form simple regression: slope = cov(x,y)/var(x).
    fn closed_form(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se_slope = (rss / (n - 2.0) / sxx).sqrt();
        (intercept, slope, se_slope)
    }

    #[test]
    fn linear_regression_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                2.0 * v + 0.3 * e
            })
            .collect();
        let coef = regression_coefficients(&x, &y, 1).unwrap();
        let (a, b, se) = closed_form(&x, &y);
        assert!((coef[0] - a).abs() < 1e-10);
        assert!((coef[1] - b).abs() < 1e-10);
        assert!(coef[0].abs() < 4.0 * 0.3 / (n as f64).sqrt());
        assert!((coef[1] - 2.0).abs() < 4.0 * se);
    }

    #[test]
    fn unridged_collinear_design_is_rank_deficient() {
        let x = vec![1.0; 50];
        let y = vec![0.0; 50];
        assert!(matches!(regression_coefficients(&x, &y, 1), Err(BsdeError::RegressionRankDeficiency { .. })));
    }

    #[test]
    fn regression_on_state_is_exact_for_spanned_targets() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let sc = Scenario::from(simulate_paths(&grid, &MarkSpace::single(1.0, 1.0).unwrap(), 4000, 5));
        let target: Vec<f64> = (0..sc.n_paths())
            .map(|p| {
                let s = sc.state(p, 1);
                1.0 + 3.0 * s.w - 0.5 * s.counts[0] as f64
            })
            .collect();
        let e = condexp(&CEBackend::regression(1), &sc, 1, &target).unwrap();
        for (a, b) in e.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_paths() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let sc = Scenario::from(simulate_paths(&grid, &MarkSpace::single(1.0, 1.0).unwrap(), 50, 5));
        assert!(matches!(
            condexp(&CEBackend::regression(2), &sc, 1, &[0.0; 50]),
            Err(BsdeError::InsufficientPaths { needed: 60, .. })
        ));
    }
}
