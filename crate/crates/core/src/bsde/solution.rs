use std::io::Write;
use std::path::Path;

use super::BsdeError;

/// Discrete `(Y, Z, ψ, K)` per path and grid index, stored step-major.
/// `Z` and `ψ` at the terminal index are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGrid {
    n_paths: usize,
    n_steps: usize,
    n_marks: usize,
    times: Vec<f64>,
    weights: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    psi: Vec<f64>,
    k: Vec<f64>,
    y0_se: f64,
}

impl SolutionGrid {
    pub fn zeros(times: Vec<f64>, weights: Vec<f64>, n_marks: usize) -> Self {
        let n_paths = weights.len();
        let n_steps = times.len() - 1;
        let cells = n_paths * (n_steps + 1);
        Self {
            n_paths,
            n_steps,
            n_marks,
            times,
            weights,
            y: vec![0.0; cells],
            z: vec![0.0; cells],
            psi: vec![0.0; cells * n_marks],
            k: vec![0.0; cells],
            y0_se: 0.0,
        }
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

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn at(&self, path: usize, step: usize) -> usize {
        step * self.n_paths + path
    }

    pub fn y(&self, path: usize, step: usize) -> f64 {
        self.y[self.at(path, step)]
    }

    pub fn z(&self, path: usize, step: usize) -> f64 {
        self.z[self.at(path, step)]
    }

    pub fn k(&self, path: usize, step: usize) -> f64 {
        self.k[self.at(path, step)]
    }

    pub fn psi(&self, path: usize, step: usize) -> &[f64] {
        let c = self.at(path, step) * self.n_marks;
        &self.psi[c..c + self.n_marks]
    }

    pub fn y_step(&self, step: usize) -> &[f64] {
        &self.y[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn y_step_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.y[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn z_step_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.z[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn psi_step_mut(&mut self, step: usize) -> &mut [f64] {
        let m = self.n_marks;
        &mut self.psi[step * self.n_paths * m..(step + 1) * self.n_paths * m]
    }

    pub fn k_step(&self, step: usize) -> &[f64] {
        &self.k[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn k_step_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.k[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn set_y(&mut self, path: usize, step: usize, v: f64) {
        let c = self.at(path, step);
        self.y[c] = v;
    }

    pub fn set_z(&mut self, path: usize, step: usize, v: f64) {
        let c = self.at(path, step);
        self.z[c] = v;
    }

    pub fn set_k(&mut self, path: usize, step: usize, v: f64) {
        let c = self.at(path, step);
        self.k[c] = v;
    }

    pub fn set_psi(&mut self, path: usize, step: usize, psi: &[f64]) {
        let c = self.at(path, step) * self.n_marks;
        self.psi[c..c + self.n_marks].copy_from_slice(psi);
    }

    /// Probability-weighted mean of a per-path quantity.
    pub fn mean(&self, values: impl Iterator<Item = f64>) -> f64 {
        values.zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn y0(&self) -> f64 {
        self.mean(self.y_step(0).iter().copied())
    }

    /// Standard error attached to `Y_0` by the solver (0 on trees).
    pub fn y0_se(&self) -> f64 {
        self.y0_se
    }

    pub fn set_y0_se(&mut self, se: f64) {
        self.y0_se = se;
    }

    pub fn k_terminal_mean(&self) -> f64 {
        self.mean(self.k_step(self.n_steps).iter().copied())
    }

    pub fn k_terminal_second_moment(&self) -> f64 {
        self.mean(self.k_step(self.n_steps).iter().map(|k| k * k))
    }

    /// `E[sup_i |Y_i|²]`.
    pub fn sup_y_second_moment(&self) -> f64 {
        self.mean((0..self.n_paths).map(|p| (0..=self.n_steps).map(|i| self.y(p, i).powi(2)).fold(0.0, f64::max)))
    }

    /// `E[Σ_i (|Z_i|² + ‖ψ_i‖²_π) Δ_i]`.
    pub fn control_energy(&self, intensities: &[f64]) -> f64 {
        self.mean((0..self.n_paths).map(|p| {
            (0..self.n_steps)
                .map(|i| {
                    let dt = self.times[i + 1] - self.times[i];
                    let jumps: f64 = self.psi(p, i).iter().zip(intensities).map(|(s, l)| s * s * l).sum();
                    (self.z(p, i).powi(2) + jumps) * dt
                })
                .sum::<f64>()
        }))
    }

    /// Smallest `K_{i+1} − K_i` over paths and steps.
    pub fn min_k_increment(&self) -> f64 {
        (0..self.n_steps)
            .flat_map(|i| (0..self.n_paths).map(move |p| (p, i)))
            .map(|(p, i)| self.k(p, i + 1) - self.k(p, i))
            .fold(f64::INFINITY, f64::min)
    }

    /// First `(path, step)` holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        (0..=self.n_steps).flat_map(|i| (0..self.n_paths).map(move |p| (p, i))).find(|&(p, i)| {
            !(self.y(p, i).is_finite() && self.z(p, i).is_finite() && self.k(p, i).is_finite())
                || self.psi(p, i).iter().any(|v| !v.is_finite())
        })
    }

    /// CSV with columns `path, step, Y, Z, psi_1..psi_m, K`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), BsdeError> {
        let io = |e: csv::Error| BsdeError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "step".into(), "Y".into(), "Z".into()];
        header.extend((1..=self.n_marks).map(|j| format!("psi_{j}")));
        header.push("K".into());
        w.write_record(&header).map_err(io)?;
        for p in 0..self.n_paths {
            for i in 0..=self.n_steps {
                let mut row = vec![p.to_string(), i.to_string(), fmt(self.y(p, i)), fmt(self.z(p, i))];
                row.extend(self.psi(p, i).iter().map(|&v| fmt(v)));
                row.push(fmt(self.k(p, i)));
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| BsdeError::Export(e.to_string()))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<(), std::io::Error> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| std::io::Error::other(e.to_string()))
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut s = SolutionGrid::zeros(vec![0.0, 0.5, 1.0], vec![0.5, 0.5], 2);
        s.set_y(1, 2, 3.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,Y,Z,psi_1,psi_2,K");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[6].starts_with("1,2,3.0"));
    }

    #[test]
    fn weighted_means() {
        let mut s = SolutionGrid::zeros(vec![0.0, 1.0], vec![0.25, 0.75], 0);
        s.set_y(0, 0, 4.0);
        assert_eq!(s.y0(), 1.0);
        s.set_k(1, 1, 2.0);
        assert_eq!(s.k_terminal_mean(), 1.5);
        assert_eq!(s.k_terminal_second_moment(), 3.0);
    }
}
