use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::{MarkSpace, PathStore, ScenarioError, TimeGrid};

/// Monte Carlo realization of `(W, N)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    marks: MarkSpace,
    seed: u64,
    /// Per step and mark: mean of the count (subtracted) and variance of the
    /// compensated increment.
    compensator: Vec<f64>,
    comp_var: Vec<f64>,
    store: PathStore,
}

/// One independent ChaCha stream per path, so the ensemble does not depend on
/// how paths are scheduled across workers.
fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Gaussian `ΔW_i ~ N(0, Δ_i)` and Poisson `ΔN_i(e_j) ~ P(λ_j Δ_i)`.
pub fn simulate_paths(grid: &TimeGrid, marks: &MarkSpace, n_paths: usize, seed: u64) -> PathEnsemble {
    let n = grid.n_steps();
    let m = marks.len();
    let n_paths = n_paths.max(1);
    let poissons: Vec<Poisson<f64>> = (0..n)
        .flat_map(|i| marks.intensities().iter().map(move |&l| Poisson::new(l * grid.dt(i)).expect("positive Poisson mean")))
        .collect();
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut dw = Vec::with_capacity(n);
            let mut dn = Vec::with_capacity(n * m);
            for i in 0..n {
                let g: f64 = StandardNormal.sample(&mut rng);
                dw.push(g * grid.dt(i).sqrt());
                for j in 0..m {
                    dn.push(poissons[i * m + j].sample(&mut rng) as u32);
                }
            }
            (dw, dn)
        })
        .collect();
    let mut dw = Vec::with_capacity(n_paths * n);
    let mut dn = Vec::with_capacity(n_paths * n * m);
    for (w, c) in rows {
        dw.extend(w);
        dn.extend(c);
    }
    let compensator = poisson_compensator(grid, marks);
    PathEnsemble::from_parts(grid.clone(), marks.clone(), seed, dw, dn, compensator.clone(), compensator)
        .expect("simulated increments have consistent shapes")
}

fn poisson_compensator(grid: &TimeGrid, marks: &MarkSpace) -> Vec<f64> {
    (0..grid.n_steps()).flat_map(|i| marks.intensities().iter().map(move |&l| l * grid.dt(i))).collect()
}

impl PathEnsemble {
    /// Ensemble from given increments, compensated with the Poisson mean `λΔ`.
    /// `dw` is row-major `[path][step]`, `dn` is `[path][step][mark]`.
    pub fn from_increments(
        grid: &TimeGrid,
        marks: &MarkSpace,
        dw: Vec<f64>,
        dn: Vec<u32>,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        let c = poisson_compensator(grid, marks);
        Self::from_parts(grid.clone(), marks.clone(), seed, dw, dn, c.clone(), c)
    }

    pub(crate) fn from_parts(
        grid: TimeGrid,
        marks: MarkSpace,
        seed: u64,
        dw: Vec<f64>,
        dn: Vec<u32>,
        compensator: Vec<f64>,
        comp_var: Vec<f64>,
    ) -> Result<Self, ScenarioError> {
        let store = PathStore::from_increments(grid.n_steps(), marks.len(), dw, dn, &compensator)?;
        Ok(Self { grid, marks, seed, compensator, comp_var, store })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.store.n_paths()
    }

    pub fn store(&self) -> &PathStore {
        &self.store
    }

    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.store.dw(path, step)
    }

    pub fn dn(&self, path: usize, step: usize, mark: usize) -> u32 {
        self.store.dn(path, step, mark)
    }

    pub fn dn_comp(&self, path: usize, step: usize, mark: usize) -> f64 {
        self.store.dn_comp(path, step, mark)
    }

    pub fn compensator(&self, step: usize, mark: usize) -> f64 {
        self.compensator[step * self.marks.len() + mark]
    }

    pub fn dn_comp_var(&self, step: usize, mark: usize) -> f64 {
        self.comp_var[step * self.marks.len() + mark]
    }

    /// The same ensemble with every Brownian increment moved by `shift`.
    pub fn with_shifted_dw(&self, shift: f64) -> Self {
        let n = self.grid.n_steps();
        let m = self.marks.len();
        let dw = (0..self.n_paths()).flat_map(|p| (0..n).map(move |i| (p, i))).map(|(p, i)| self.dw(p, i) + shift).collect();
        let dn = (0..self.n_paths())
            .flat_map(|p| (0..n).flat_map(move |i| (0..m).map(move |j| (p, i, j))))
            .map(|(p, i, j)| self.dn(p, i, j))
            .collect();
        Self::from_parts(
            self.grid.clone(),
            self.marks.clone(),
            self.seed,
            dw,
            dn,
            self.compensator.clone(),
            self.comp_var.clone(),
        )
        .expect("shapes unchanged")
    }

    /// Paths `range` as their own ensemble (used for batch-means error bars).
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            grid: self.grid.clone(),
            marks: self.marks.clone(),
            seed: self.seed,
            compensator: self.compensator.clone(),
            comp_var: self.comp_var.clone(),
            store: self.store.subset(range),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let marks = MarkSpace::new(vec![1.0, -1.0], vec![1.0, 0.5], vec![1.0, 1.0]).unwrap();
        let a = simulate_paths(&grid, &marks, 300, 42);
        let b = simulate_paths(&grid, &marks, 300, 42);
        assert_eq!(a, b);
        let c = simulate_paths(&grid, &marks, 300, 43);
        assert_ne!(a.store(), c.store());
    }

    #[test]
    fn path_streams_do_not_depend_on_ensemble_size() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let small = simulate_paths(&grid, &marks, 10, 5);
        let large = simulate_paths(&grid, &marks, 100, 5);
        assert_eq!(small.store(), large.subset(0..10).store());
    }

    #[test]
    fn one_step_moments() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let marks = MarkSpace::single(1.0, 1.0).unwrap();
        let n = 100_000;
        let e = simulate_paths(&grid, &marks, n, 2024);
        let counts: Vec<f64> = (0..n).map(|p| e.dn(p, 0, 0) as f64).collect();
        let mean_n = counts.iter().sum::<f64>() / n as f64;
        // Poisson(1): s.e. of the mean is 1/sqrt(n)
        assert!((mean_n - 1.0).abs() <= 4.0 / (n as f64).sqrt(), "mean {mean_n}");
        let dws: Vec<f64> = (0..n).map(|p| e.dw(p, 0)).collect();
        let mean_w = dws.iter().sum::<f64>() / n as f64;
        let var_w = dws.iter().map(|x| (x - mean_w).powi(2)).sum::<f64>() / (n - 1) as f64;
        // var of the sample variance of N(0,1) is 2/n
        assert!((var_w - 1.0).abs() <= 4.0 * (2.0 / n as f64).sqrt(), "var {var_w}");
    }
}
