use std::collections::BTreeMap;

use super::{FamilyShape, GrowthEnvelope, MonotoneError, MonotoneFamily, SignMode};

pub type Params = BTreeMap<String, f64>;

pub const FAMILY_NAMES: &[&str] =
    &["reflect_at", "constant", "min_zero", "neg_exp", "step", "inv_barrier", "linear_decay", "sqrt_singular"];

pub const ENVELOPE_NAMES: &[&str] = &["decay", "offset_decay"];

struct Reader<'a> {
    name: &'a str,
    params: &'a Params,
    allowed: &'a [&'a str],
}

impl<'a> Reader<'a> {
    fn new(name: &'a str, params: &'a Params, allowed: &'a [&'a str]) -> Result<Self, MonotoneError> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(MonotoneError::BadParameter {
                name: name.into(),
                detail: format!("unknown parameter '{k}', expected one of {allowed:?}"),
            });
        }
        Ok(Self { name, params, allowed })
    }

    fn get(&self, key: &str, default: f64) -> Result<f64, MonotoneError> {
        debug_assert!(self.allowed.contains(&key));
        let v = self.params.get(key).copied().unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad(format!("{key} must be finite")))
        }
    }

    fn bad(&self, detail: String) -> MonotoneError {
        MonotoneError::BadParameter { name: self.name.into(), detail }
    }
}

/// Look up a named family. `horizon` is the terminal time `T` for families
/// whose body depends on it.
pub fn family_by_name(name: &str, params: &Params, horizon: f64) -> Result<MonotoneFamily, MonotoneError> {
    let fam = match name {
        "reflect_at" => {
            let r = Reader::new(name, params, &["a", "c"])?;
            let a = r.get("a", 0.0)?;
            let c = r.get("c", 0.0)?;
            if c > 0.0 {
                return Err(r.bad("c must be <= 0".into()));
            }
            MonotoneFamily::new(name, move |_| a, move |_, _| c, SignMode::NegativeValued)
                .with_left_body(move |_, _| c)
                .with_boundary_membership(|_| true)
                .with_shape(FamilyShape::Reflection { level: c })
        }
        "constant" => {
            let r = Reader::new(name, params, &["c"])?;
            let c = r.get("c", -1.0)?;
            let mode = if c <= 0.0 { SignMode::NegativeValued } else { SignMode::RealValued };
            MonotoneFamily::on_real_line(name, move |_, _| c, mode).with_left_body(move |_, _| c).with_lipschitz(0.0)
        }
        "min_zero" => {
            Reader::new(name, params, &[])?;
            MonotoneFamily::on_real_line(name, |_, x: f64| x.min(0.0), SignMode::NegativeValued)
                .with_left_body(|_, x: f64| x.min(0.0))
                .with_lipschitz(1.0)
        }
        "neg_exp" => {
            Reader::new(name, params, &[])?;
            MonotoneFamily::on_real_line(name, |_, x: f64| -(-x).exp(), SignMode::NegativeValued)
                .with_left_body(|_, x: f64| -(-x).exp())
        }
        "step" => {
            let r = Reader::new(name, params, &["lo", "hi", "at"])?;
            let lo = r.get("lo", -1.0)?;
            let hi = r.get("hi", 0.0)?;
            let at = r.get("at", 1.0)?;
            if lo > hi || hi > 0.0 {
                return Err(r.bad("need lo <= hi <= 0".into()));
            }
            MonotoneFamily::on_real_line(name, move |_, x| if x < at { lo } else { hi }, SignMode::NegativeValued)
                .with_left_body(move |_, x| if x <= at { lo } else { hi })
        }
        "inv_barrier" => {
            let r = Reader::new(name, params, &["a"])?;
            let a = r.get("a", 0.0)?;
            MonotoneFamily::new(name, move |_| a, move |_, x| -1.0 / (x - a), SignMode::NegativeValued)
                .with_left_body(move |_, x| -1.0 / (x - a))
                .with_boundary_membership(|_| false)
        }
        "linear_decay" => {
            Reader::new(name, params, &[])?;
            MonotoneFamily::on_real_line(name, move |t, x| (horizon - t) * x, SignMode::RealValued)
                .with_left_body(move |t, x| (horizon - t) * x)
                .with_lipschitz(horizon)
        }
        "sqrt_singular" => {
            Reader::new(name, params, &[])?;
            let body = move |t: f64, x: f64| -(1.0 + (-x).exp()) / (horizon - t).sqrt();
            MonotoneFamily::on_real_line(name, body, SignMode::NegativeValued).with_left_body(body)
        }
        _ => return Err(MonotoneError::UnknownName { kind: "family", name: name.into() }),
    };
    Ok(fam)
}

pub fn envelope_by_name(name: &str, params: &Params, horizon: f64) -> Result<GrowthEnvelope, MonotoneError> {
    match name {
        "decay" => {
            Reader::new(name, params, &[])?;
            Ok(GrowthEnvelope::new(name, move |t, x: f64| (horizon - t) * (1.0 + x.max(0.0)), horizon))
        }
        "offset_decay" => {
            let r = Reader::new(name, params, &["eps"])?;
            let eps = r.get("eps", 0.1)?;
            Ok(GrowthEnvelope::new(name, move |t, x: f64| (horizon - t) * (1.0 + x.max(0.0)) + eps, horizon + eps.abs()))
        }
        _ => Err(MonotoneError::UnknownName { kind: "envelope", name: name.into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone_ops::Side;

    #[test]
    fn every_name_resolves() {
        for name in FAMILY_NAMES {
            family_by_name(name, &Params::new(), 1.0).unwrap();
        }
        for name in ENVELOPE_NAMES {
            envelope_by_name(name, &Params::new(), 1.0).unwrap();
        }
    }

    #[test]
    fn unknown_names_and_params() {
        assert!(matches!(family_by_name("does_not_exist", &Params::new(), 1.0), Err(MonotoneError::UnknownName { .. })));
        let mut p = Params::new();
        p.insert("zz".into(), 1.0);
        assert!(matches!(family_by_name("reflect_at", &p, 1.0), Err(MonotoneError::BadParameter { .. })));
    }

    #[test]
    fn reflect_at_parameters() {
        let mut p = Params::new();
        p.insert("a".into(), -0.5);
        let f = family_by_name("reflect_at", &p, 1.0).unwrap();
        assert_eq!(f.boundary(0.2), (-0.5, true));
        assert_eq!(f.eval(0.2, -0.5, Side::Right).unwrap(), 0.0);
    }

    #[test]
    fn inv_barrier_boundary_excluded() {
        let f = family_by_name("inv_barrier", &Params::new(), 1.0).unwrap();
        assert_eq!(f.boundary(0.3), (0.0, false));
    }
}
