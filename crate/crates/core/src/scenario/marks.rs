use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Finite mark space `{e_1, ..., e_m}` with intensities `λ_j = π({e_j})` and
/// bounds `ϑ_j` for the jump weights of γ-form drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSpace {
    values: Vec<f64>,
    intensities: Vec<f64>,
    vartheta: Vec<f64>,
}

impl MarkSpace {
    pub fn new(values: Vec<f64>, intensities: Vec<f64>, vartheta: Vec<f64>) -> Result<Self, ScenarioError> {
        let m = values.len();
        if intensities.len() != m || vartheta.len() != m {
            return Err(ScenarioError::InvalidMarks(format!(
                "length mismatch: {} values, {} intensities, {} vartheta",
                m,
                intensities.len(),
                vartheta.len()
            )));
        }
        for (j, &l) in intensities.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(ScenarioError::InvalidMarks(format!(
                    "intensity of mark {} must be positive and finite, got {l}",
                    j + 1
                )));
            }
        }
        for (j, &v) in vartheta.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ScenarioError::InvalidMarks(format!("vartheta of mark {} must be nonnegative, got {v}", j + 1)));
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                if values[i] == values[j] {
                    return Err(ScenarioError::InvalidMarks(format!(
                        "marks {} and {} share the value {}",
                        i + 1,
                        j + 1,
                        values[i]
                    )));
                }
            }
        }
        Ok(Self { values, intensities, vartheta })
    }

    /// No jumps at all: the Brownian-only setting.
    pub fn empty() -> Self {
        Self { values: vec![], intensities: vec![], vartheta: vec![] }
    }

    /// One mark with value 1.
    pub fn single(intensity: f64, vartheta: f64) -> Result<Self, ScenarioError> {
        Self::new(vec![1.0], vec![intensity], vec![vartheta])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn intensity(&self, j: usize) -> f64 {
        self.intensities[j]
    }

    pub fn vartheta(&self) -> &[f64] {
        &self.vartheta
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// `‖φ‖²_π = Σ_j φ(e_j)² λ_j`.
    pub fn norm_sq(&self, phi: &[f64]) -> f64 {
        debug_assert_eq!(phi.len(), self.len());
        phi.iter().zip(&self.intensities).map(|(p, l)| p * p * l).sum()
    }

    /// `‖ϑ‖_π`, the jump part of the driver's Lipschitz constant.
    pub fn vartheta_norm(&self) -> f64 {
        self.norm_sq(&self.vartheta).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_matches_direct_sum() {
        let m = MarkSpace::new(vec![0.5, 2.0], vec![1.0, 0.25], vec![1.0, 1.0]).unwrap();
        let phi = [3.0, -2.0];
        assert_eq!(m.norm_sq(&phi), 9.0 * 1.0 + 4.0 * 0.25);
        assert_eq!(m.vartheta_norm(), 1.25f64.sqrt());
    }

    #[test]
    fn rejects_nonpositive_intensity() {
        assert!(MarkSpace::new(vec![1.0], vec![-1.0], vec![0.0]).is_err());
        assert!(MarkSpace::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(MarkSpace::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }
}
