//! Time-indexed increasing functions `k(t,·)` and the maximal monotone
//! operators they generate on `D_t`, together with their Lipschitz
//! penalization approximants `k_n`.
//!
//! The operator at time `t` fills the jumps of `k(t,·)` on the interior
//! `]a_t, ∞[` and, when the boundary belongs to the domain, adds the vertical
//! ray `]−∞, k(t,a_t)]` above `a_t`. `k_n(t,x)` is the ordinate where the line
//! of slope `−n` through `(x, 0)` crosses that graph.

mod registry;
mod validate;

pub use registry::{envelope_by_name, family_by_name, Params, ENVELOPE_NAMES, FAMILY_NAMES};
pub(crate) use validate::midpoint_integral;
pub use validate::{validate_assumptions, ValidationItem, ValidationReport};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type MembershipFn = Arc<dyn Fn(f64) -> bool + Send + Sync>;

pub const DEFAULT_ROOT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_SEARCH_RADIUS: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonotoneError {
    #[error("x = {x} is outside D_t at t = {t} (boundary {boundary}, boundary in domain: {in_domain})")]
    DomainViolation { t: f64, x: f64, boundary: f64, in_domain: bool },
    #[error("could not bracket the graph intersection for x = {x} at t = {t} within radius {radius}")]
    NoBracket { t: f64, x: f64, radius: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },
    #[error("bad parameter for '{name}': {detail}")]
    BadParameter { name: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Graphs in `ℝ × ℝ_−`.
    NegativeValued,
    /// Graphs in `ℝ × ℝ`; handled by truncation and concatenation.
    RealValued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

/// Structural tag used by oracles that only exist for some shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyShape {
    General,
    /// `k ≡ level ≤ 0` on `[a_t, ∞)`, boundary in the domain.
    Reflection {
        level: f64,
    },
}

/// A family `{k(t,·)}` of increasing, right-continuous functions on moving
/// domains `D_t ⊂ [a_t, ∞)`.
#[derive(Clone)]
pub struct MonotoneFamily {
    name: String,
    boundary: BoundaryFn,
    membership: Option<MembershipFn>,
    body: Evaluator,
    left_body: Option<Evaluator>,
    sign_mode: SignMode,
    shape: FamilyShape,
    lipschitz: Option<f64>,
}

impl fmt::Debug for MonotoneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneFamily")
            .field("name", &self.name)
            .field("sign_mode", &self.sign_mode)
            .field("shape", &self.shape)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl MonotoneFamily {
    pub fn new(
        name: impl Into<String>,
        boundary: impl Fn(f64) -> f64 + Send + Sync + 'static,
        body: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sign_mode: SignMode,
    ) -> Self {
        Self {
            name: name.into(),
            boundary: Arc::new(boundary),
            membership: None,
            body: Arc::new(body),
            left_body: None,
            sign_mode,
            shape: FamilyShape::General,
            lipschitz: None,
        }
    }

    /// Family defined on all of `ℝ`.
    pub fn on_real_line(
        name: impl Into<String>,
        body: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sign_mode: SignMode,
    ) -> Self {
        Self::new(name, |_| f64::NEG_INFINITY, body, sign_mode)
    }

    /// Exact left limits `k_-(t,x)`; without them the δ-refinement of
    /// [`MonotoneFamily::left_limit`] is used.
    pub fn with_left_body(mut self, left: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.left_body = Some(Arc::new(left));
        self
    }

    /// Override the default boundary-membership rule.
    pub fn with_boundary_membership(mut self, member: impl Fn(f64) -> bool + Send + Sync + 'static) -> Self {
        self.membership = Some(Arc::new(member));
        self
    }

    pub fn with_shape(mut self, shape: FamilyShape) -> Self {
        self.shape = shape;
        self
    }

    /// Declared global Lipschitz constant in `x` (single-valued families on `ℝ`).
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sign_mode(&self) -> SignMode {
        self.sign_mode
    }

    pub fn shape(&self) -> FamilyShape {
        self.shape
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// `(a_t, a_t ∈ D_t)`. Without an explicit rule the boundary belongs to
    /// the domain iff `a_t > −∞` and `k(t,·)` has a finite limit at `a_t` from
    /// inside the domain.
    pub fn boundary(&self, t: f64) -> (f64, bool) {
        let a = (self.boundary)(t);
        if !a.is_finite() {
            return (a, false);
        }
        let inside = match &self.membership {
            Some(m) => m(t),
            None => (self.body)(t, a).is_finite(),
        };
        (a, inside)
    }

    pub fn in_domain(&self, t: f64, x: f64) -> bool {
        let (a, inside) = self.boundary(t);
        x > a || (x == a && inside)
    }

    /// Raw body evaluation without the domain check.
    pub(crate) fn body(&self, t: f64, x: f64) -> f64 {
        (self.body)(t, x)
    }

    /// `k(t,x)` (right) or `k_-(t,x)` (left) for `x ∈ D_t`.
    pub fn eval(&self, t: f64, x: f64, side: Side) -> Result<f64, MonotoneError> {
        let (a, inside) = self.boundary(t);
        let violation = MonotoneError::DomainViolation { t, x, boundary: a, in_domain: inside };
        match side {
            Side::Right if self.in_domain(t, x) => Ok((self.body)(t, x)),
            Side::Left if x > a => Ok(self.left_limit(t, x)),
            _ => Err(violation),
        }
    }

    /// `k_-(t,x)` at an interior point. With no exact left body this evaluates
    /// `k(t, x − δ)` for `δ = 10^{-3}, 10^{-4}, …` until two successive values
    /// agree to `1e-12` or `δ` reaches the resolution of `x`.
    pub fn left_limit(&self, t: f64, x: f64) -> f64 {
        if let Some(left) = &self.left_body {
            return left(t, x);
        }
        let (a, _) = self.boundary(t);
        let floor = 1e-13 * x.abs().max(1.0);
        let mut delta = 1e-3_f64.min((x - a) / 2.0);
        let mut prev = (self.body)(t, x - delta);
        loop {
            let next_delta = delta / 10.0;
            if next_delta < floor {
                return prev;
            }
            let next = (self.body)(t, x - next_delta);
            if (next - prev).abs() <= 1e-12 {
                return next;
            }
            prev = next;
            delta = next_delta;
        }
    }

    /// `(x, y) ∈ Gr(k_t)`.
    pub fn graph_contains(&self, t: f64, x: f64, y: f64) -> bool {
        let (a, inside) = self.boundary(t);
        if x > a {
            let hi = (self.body)(t, x);
            let lo = self.left_limit(t, x);
            lo <= y && y <= hi
        } else if x == a && inside {
            y <= (self.body)(t, a)
        } else {
            false
        }
    }

    /// Truncation `min(k, n) − n`, negative-valued, same domain.
    pub fn truncate_shift(&self, n: u64) -> Result<MonotoneFamily, MonotoneError> {
        if self.sign_mode != SignMode::RealValued {
            return Err(MonotoneError::Precondition(format!(
                "truncate_shift expects a real-valued family, '{}' is negative-valued",
                self.name
            )));
        }
        if n == 0 {
            return Err(MonotoneError::Precondition("truncation level must be at least 1".into()));
        }
        let cap = n as f64;
        let body = self.body.clone();
        let left = self.left_body.clone();
        let membership_body = self.body.clone();
        let boundary = self.boundary.clone();
        let membership = self.membership.clone();
        let mut out = MonotoneFamily {
            name: format!("{}^{}", self.name, n),
            boundary,
            membership: Some(match membership {
                Some(m) => m,
                None => {
                    let bnd = self.boundary.clone();
                    Arc::new(move |t| {
                        let a = bnd(t);
                        a.is_finite() && membership_body(t, a).is_finite()
                    })
                }
            }),
            body: Arc::new(move |t, x| body(t, x).min(cap) - cap),
            left_body: None,
            sign_mode: SignMode::NegativeValued,
            shape: FamilyShape::General,
            lipschitz: self.lipschitz,
        };
        if let Some(left) = left {
            out.left_body = Some(Arc::new(move |t, x| left(t, x).min(cap) - cap));
        }
        Ok(out)
    }

    pub fn penalized(&self, level: u64) -> PenalizedOperator {
        PenalizedOperator::new(self.clone(), level)
    }
}

/// Growth bound `ℓ(t,x)` for real-valued families: `(k)^+ ≤ ℓ`, `ℓ(T,·) = 0`.
#[derive(Clone)]
pub struct GrowthEnvelope {
    name: String,
    eval: Evaluator,
    linear_growth_constant: f64,
}

impl fmt::Debug for GrowthEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthEnvelope")
            .field("name", &self.name)
            .field("linear_growth_constant", &self.linear_growth_constant)
            .finish_non_exhaustive()
    }
}

impl GrowthEnvelope {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        linear_growth_constant: f64,
    ) -> Self {
        Self { name: name.into(), eval: Arc::new(eval), linear_growth_constant }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.eval)(t, x)
    }

    pub fn linear_growth_constant(&self) -> f64 {
        self.linear_growth_constant
    }

    /// `x_{n,t} = inf{x : ℓ(t,x) ≥ n}`; `+∞` if the set is empty (searched up
    /// to `|x| ≤ 1e12`), `−∞` if it is everything.
    pub fn threshold(&self, t: f64, n: f64) -> f64 {
        const FAR: f64 = 1e12;
        if self.eval(t, FAR) < n {
            return f64::INFINITY;
        }
        if self.eval(t, -FAR) >= n {
            return f64::NEG_INFINITY;
        }
        let (mut lo, mut hi) = (-FAR, FAR);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.eval(t, mid) >= n {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// The level-`n` penalization `k_n(t,·)` of a family.
#[derive(Clone, Debug)]
pub struct PenalizedOperator {
    family: MonotoneFamily,
    level: u64,
    root_tolerance: f64,
    search_radius: f64,
}

impl PenalizedOperator {
    pub fn new(family: MonotoneFamily, level: u64) -> Self {
        Self { family, level: level.max(1), root_tolerance: DEFAULT_ROOT_TOLERANCE, search_radius: DEFAULT_SEARCH_RADIUS }
    }

    pub fn with_root_tolerance(mut self, tol: f64) -> Self {
        self.root_tolerance = tol;
        self
    }

    pub fn with_search_radius(mut self, radius: f64) -> Self {
        self.search_radius = radius;
        self
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn family(&self) -> &MonotoneFamily {
        &self.family
    }

    pub fn root_tolerance(&self) -> f64 {
        self.root_tolerance
    }

    /// `k_n(t,x)` for any real `x`.
    ///
    /// The intersection abscissa `u*` is the smallest `u ∈ D_t` with
    /// `u + k(t,u)/n ≥ x`, found by bisection. The returned ordinate is the
    /// point of the line `v = n(x − u)` that is consistent with the final
    /// bracket `[lo, hi]`, i.e. clamped to `[k(t,lo), k(t,hi)]`; this keeps
    /// flat and filled-in parts of the graph exact. When `x` lies below
    /// `a_t + k(t,a_t)/n` the line meets the vertical boundary ray and the
    /// result is `n(x − a_t)`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64, MonotoneError> {
        let fam = &self.family;
        let n = self.level as f64;
        let k = |u: f64| fam.body(t, u);
        let reaches = |u: f64| u + k(u) / n >= x;
        let (a, a_inside) = fam.boundary(t);
        let no_bracket = || MonotoneError::NoBracket { t, x, radius: self.search_radius };

        if a.is_finite() && a_inside {
            let ka = k(a);
            if x <= a + ka / n {
                return Ok(n * (x - a));
            }
        }

        let base = if a.is_finite() { x.max(a) } else { x };
        let mut width = 1.0;
        let mut hi = base + width;
        while !reaches(hi) {
            width *= 2.0;
            if width > self.search_radius {
                return Err(no_bracket());
            }
            hi = base + width;
        }

        let mut lo = if a.is_finite() && a_inside {
            a
        } else if a.is_finite() {
            let mut gap = (hi - a) / 2.0;
            let mut lo = a + gap;
            let mut tries = 0;
            while reaches(lo) {
                gap /= 2.0;
                lo = a + gap;
                tries += 1;
                if tries > 1100 || lo <= a {
                    return Err(no_bracket());
                }
            }
            lo
        } else {
            let kx = k(x);
            let bound = if kx.is_finite() { kx.abs() / n } else { 0.0 };
            let mut width = 1.0;
            let mut lo = x.min(hi) - bound - width;
            while reaches(lo) {
                width *= 2.0;
                if width > self.search_radius {
                    return Err(no_bracket());
                }
                lo = x.min(hi) - bound - width;
            }
            lo
        };

        // Illinois false position on g(u) = u + k(u)/n − x, with a bisection
        // every fourth step; each interior point is also tested as the centre
        // of a bracket of width `root_tolerance`.
        let g = |u: f64| u + k(u) / n - x;
        let (mut glo, mut ghi) = (g(lo), g(hi));
        let mut side = 0i8;
        let mut iter = 0u32;
        while hi - lo > self.root_tolerance {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            iter += 1;
            let mut c = if iter.is_multiple_of(4) || !glo.is_finite() || !ghi.is_finite() || ghi <= glo {
                mid
            } else {
                (lo * ghi - hi * glo) / (ghi - glo)
            };
            if !(c > lo && c < hi) {
                c = mid;
            }
            let gc = g(c);
            if gc >= 0.0 {
                hi = c;
                ghi = gc;
                if side == 1 {
                    glo *= 0.5;
                }
                side = 1;
            } else {
                lo = c;
                glo = gc;
                if side == -1 {
                    ghi *= 0.5;
                }
                side = -1;
            }
            let h = 0.5 * self.root_tolerance;
            if hi - lo > self.root_tolerance && c != mid {
                let (l2, h2) = (c - h, c + h);
                if l2 > lo && l2 < hi && !reaches(l2) && h2 > lo && h2 < hi && reaches(h2) {
                    lo = l2;
                    hi = h2;
                }
            }
        }

        let mid = 0.5 * (lo + hi);
        let lower = (n * (x - hi)).max(k(lo));
        let upper = (n * (x - lo)).min(k(hi));
        let v = if lower <= upper { (n * (x - mid)).clamp(lower, upper) } else { (0.5 * (lower + upper)).clamp(k(lo), k(hi)) };
        Ok(v)
    }
}
