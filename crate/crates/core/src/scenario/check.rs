use serde::Serialize;

use super::PathEnsemble;

/// Gate on the sample martingale property of `ΔW` and `ΔÑ`.
const Z_GATE: f64 = 4.0;

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleEntry {
    pub step: usize,
    /// `None` for the Brownian increment, `Some(j)` for mark `j`.
    pub mark: Option<usize>,
    pub mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub entries: Vec<MartingaleEntry>,
    /// z-scores of the sample correlation between `ΔW_i` and `ΔN_i(e_j)`.
    pub independence_z: Vec<f64>,
    pub pass: bool,
}

impl MartingaleReport {
    pub fn max_abs_z(&self) -> f64 {
        self.entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max)
    }
}

fn mean_and_z(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let z = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (mean, z)
}

/// Per step and mark z-scores of the sample means of `ΔW_i` and `ΔÑ_i(e_j)`;
/// passes iff every `|z| ≤ 4`.
pub fn martingale_check(ensemble: &PathEnsemble) -> MartingaleReport {
    let n = ensemble.n_paths();
    let steps = ensemble.grid().n_steps();
    let m = ensemble.marks().len();
    let mut entries = Vec::new();
    let mut independence_z = Vec::new();
    for i in 0..steps {
        let dw: Vec<f64> = (0..n).map(|p| ensemble.dw(p, i)).collect();
        let (mean, z) = mean_and_z(&dw);
        entries.push(MartingaleEntry { step: i, mark: None, mean, z });
        for j in 0..m {
            let dn: Vec<f64> = (0..n).map(|p| ensemble.dn_comp(p, i, j)).collect();
            let (mean, z) = mean_and_z(&dn);
            entries.push(MartingaleEntry { step: i, mark: Some(j), mean, z });
            independence_z.push(correlation(&dw, &dn) * (n as f64).sqrt());
        }
    }
    let pass = entries.iter().all(|e| e.z.abs() <= Z_GATE) && independence_z.iter().all(|z| z.abs() <= Z_GATE);
    MartingaleReport { entries, independence_z, pass }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
