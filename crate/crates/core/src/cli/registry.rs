use crate::bsde::{BsdeError, DriverSpec, TerminalSpec};
use crate::monotone_ops::{MonotoneError, Params};
use crate::scenario::MarkSpace;

pub const DRIVER_NAMES: &[&str] = &["zero", "constant", "affine"];
pub const TERMINAL_NAMES: &[&str] = &["brownian", "brownian_positive", "compensated_poisson", "mixed", "constant"];

#[derive(Debug, Clone, PartialEq)]
pub enum RegistryError {
    UnknownName { kind: &'static str, name: String },
    BadParameter(String),
}

fn read(params: &Params, allowed: &[&str], key: &str, default: f64) -> Result<f64, RegistryError> {
    if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(RegistryError::BadParameter(format!("unknown parameter '{bad}', expected one of {allowed:?}")));
    }
    let v = params.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(RegistryError::BadParameter(format!("parameter '{key}' must be finite")));
    }
    Ok(v)
}

impl From<BsdeError> for RegistryError {
    fn from(e: BsdeError) -> Self {
        RegistryError::BadParameter(e.to_string())
    }
}

impl From<MonotoneError> for RegistryError {
    fn from(e: MonotoneError) -> Self {
        match e {
            MonotoneError::UnknownName { kind, name } => RegistryError::UnknownName { kind, name },
            other => RegistryError::BadParameter(other.to_string()),
        }
    }
}

/// `zero`; `constant(c)`; `affine(a, b, c, d)` with `h = a·y + b·z + c·q + d`.
/// An empty `gamma` means zero weights.
pub fn driver_by_name(name: &str, params: &Params, gamma: &[f64], marks: &MarkSpace) -> Result<DriverSpec, RegistryError> {
    let gamma = if gamma.is_empty() { vec![0.0; marks.len()] } else { gamma.to_vec() };
    match name {
        "zero" => {
            read(params, &[], "", 0.0)?;
            Ok(DriverSpec::zero(marks))
        }
        "constant" => Ok(DriverSpec::constant(read(params, &["c"], "c", 0.0)?, marks)),
        "affine" => {
            let keys = ["a", "b", "c", "d"];
            let [a, b, c, d] = keys.map(|k| read(params, &keys, k, 0.0));
            Ok(DriverSpec::affine(a?, b?, c?, d?, gamma, marks)?)
        }
        _ => Err(RegistryError::UnknownName { kind: "driver", name: name.into() }),
    }
}

/// `brownian(scale, shift)`: `scale·W_T + shift`; `brownian_positive(shift)`:
/// `W_T⁺ + shift`; `compensated_poisson(mark)`: `Ñ_T(e_mark)`;
/// `mixed(w, n, shift)`: `w·W_T + n·Σ_j Ñ_T(e_j) + shift`; `constant(c)`.
pub fn terminal_by_name(name: &str, params: &Params, marks: &MarkSpace) -> Result<TerminalSpec, RegistryError> {
    match name {
        "brownian" => {
            let keys = ["scale", "shift"];
            let (scale, shift) = (read(params, &keys, "scale", 1.0)?, read(params, &keys, "shift", 0.0)?);
            Ok(TerminalSpec::new(name, move |s| scale * s.w + shift))
        }
        "brownian_positive" => {
            let shift = read(params, &["shift"], "shift", 0.0)?;
            Ok(TerminalSpec::new(name, move |s| s.w.max(0.0) + shift))
        }
        "compensated_poisson" => {
            let mark = read(params, &["mark"], "mark", 0.0)?;
            if mark < 0.0 || mark.fract() != 0.0 || mark as usize >= marks.len() {
                return Err(RegistryError::BadParameter(format!("mark {mark} is not an index below {}", marks.len())));
            }
            Ok(TerminalSpec::compensated_poisson(mark as usize))
        }
        "mixed" => {
            let keys = ["w", "n", "shift"];
            let (w, n, shift) =
                (read(params, &keys, "w", 1.0)?, read(params, &keys, "n", 1.0)?, read(params, &keys, "shift", 0.0)?);
            Ok(TerminalSpec::new(name, move |s| w * s.w + n * s.compensated.iter().sum::<f64>() + shift))
        }
        "constant" => {
            let c = read(params, &["c"], "c", 0.0)?;
            Ok(TerminalSpec::new(name, move |_| c))
        }
        _ => Err(RegistryError::UnknownName { kind: "terminal", name: name.into() }),
    }
}
