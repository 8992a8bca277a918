use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Discretization `0 = t_0 < t_1 < ... < t_N = T` of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, ScenarioError> {
        if times.len() < 2 {
            return Err(ScenarioError::InvalidGrid("need at least two grid times".into()));
        }
        if times[0] != 0.0 {
            return Err(ScenarioError::InvalidGrid(format!("grid must start at 0, got {}", times[0])));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(ScenarioError::InvalidGrid(format!(
                    "times not strictly increasing at index {}: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Equidistant grid with `n_steps` steps on `[0, horizon]`. The last time is
    /// set to `horizon` exactly.
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self, ScenarioError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ScenarioError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(ScenarioError::InvalidGrid("need at least one step".into()));
        }
        let mut times: Vec<f64> = (0..=n_steps).map(|i| horizon * i as f64 / n_steps as f64).collect();
        times[n_steps] = horizon;
        Self::new(times)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Step length `t_{i+1} - t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Each step split into `factor` equal sub-steps.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut times = Vec::with_capacity(self.n_steps() * factor + 1);
        for i in 0..self.n_steps() {
            let (a, b) = (self.times[i], self.times[i + 1]);
            for s in 0..factor {
                times.push(a + (b - a) * s as f64 / factor as f64);
            }
        }
        times.push(self.horizon());
        Self { times }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_ends_exactly_at_horizon() {
        let g = TimeGrid::uniform(0.7, 3).unwrap();
        assert_eq!(g.n_steps(), 3);
        assert_eq!(g.horizon(), 0.7);
        assert!((0..3).all(|i| g.dt(i) > 0.0));
    }

    #[test]
    fn rejects_non_monotone_times() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
        assert!(TimeGrid::uniform(-1.0, 4).is_err());
    }

    #[test]
    fn refinement_keeps_original_nodes() {
        let g = TimeGrid::new(vec![0.0, 0.25, 1.0]).unwrap();
        let r = g.refined(4);
        assert_eq!(r.n_steps(), 8);
        assert_eq!(r.time(4), 0.25);
        assert_eq!(r.horizon(), 1.0);
    }
}
