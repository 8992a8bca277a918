use std::fmt;
use std::sync::Arc;

use super::BsdeError;
use crate::scenario::{ForwardState, MarkSpace};

/// Anything the backward solver can use as a driver.
pub trait Generator: Sync {
    fn eval(&self, state: &ForwardState<'_>, y: f64, z: f64, psi: &[f64]) -> Result<f64, BsdeError>;

    /// Global Lipschitz constant in `y`.
    fn y_lipschitz(&self) -> f64;

    /// One-sided constant `L⁺` with `(f(y) − f(y'))(y − y') ≤ L⁺ |y − y'|²`.
    fn y_one_sided(&self) -> f64 {
        self.y_lipschitz()
    }
}

type ShapeFn = Arc<dyn Fn(f64, &ForwardState<'_>, f64, f64, f64) -> f64 + Send + Sync>;
type GeneralFn = Arc<dyn Fn(f64, &ForwardState<'_>, f64, f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// `h(t, x, y, z, q)` with `q = Σ_j ψ_j γ_j λ_j`.
    Gamma(ShapeFn),
    General(GeneralFn),
}

/// Driver `f(t,x,y,z,ψ) = h(t,x,y,z,Σ_j ψ(e_j) γ_j λ_j)`.
#[derive(Clone)]
pub struct DriverSpec {
    name: String,
    shape: Shape,
    gamma: Vec<f64>,
    q_weights: Vec<f64>,
    lipschitz_c: f64,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("gamma", &self.gamma)
            .field("lipschitz_c", &self.lipschitz_c)
            .field("gamma_form", &self.is_gamma_form())
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    /// γ-form driver; checks `γ_j ≥ −1` and `|γ_j| ≤ ϑ_j`.
    pub fn new(
        name: impl Into<String>,
        h: impl Fn(f64, &ForwardState<'_>, f64, f64, f64) -> f64 + Send + Sync + 'static,
        gamma: Vec<f64>,
        marks: &MarkSpace,
        lipschitz_c: f64,
    ) -> Result<Self, BsdeError> {
        if gamma.len() != marks.len() {
            return Err(BsdeError::InvalidDriver(format!("{} gamma weights for {} marks", gamma.len(), marks.len())));
        }
        for (j, (&g, &v)) in gamma.iter().zip(marks.vartheta()).enumerate() {
            if !(g >= -1.0) || g.abs() > v {
                return Err(BsdeError::InvalidDriver(format!(
                    "gamma_{} = {g} must satisfy gamma >= -1 and |gamma| <= vartheta = {v}",
                    j + 1
                )));
            }
        }
        if !(lipschitz_c >= 0.0) {
            return Err(BsdeError::InvalidDriver(format!("Lipschitz constant {lipschitz_c} must be >= 0")));
        }
        let q_weights = gamma.iter().zip(marks.intensities()).map(|(g, l)| g * l).collect();
        Ok(Self { name: name.into(), shape: Shape::Gamma(Arc::new(h)), gamma, q_weights, lipschitz_c })
    }

    /// Driver outside the γ-form. Accepted by the solver, but comparison
    /// checks refuse it.
    pub fn general(
        name: impl Into<String>,
        f: impl Fn(f64, &ForwardState<'_>, f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        lipschitz_c: f64,
    ) -> Self {
        Self { name: name.into(), shape: Shape::General(Arc::new(f)), gamma: vec![], q_weights: vec![], lipschitz_c }
    }

    /// `h = a·y + b·z + c·q + d`.
    pub fn affine(a: f64, b: f64, c: f64, d: f64, gamma: Vec<f64>, marks: &MarkSpace) -> Result<Self, BsdeError> {
        if c < 0.0 {
            return Err(BsdeError::InvalidDriver(format!("q coefficient {c} must be >= 0")));
        }
        Self::new("affine", move |_, _, y, z, q| a * y + b * z + c * q + d, gamma, marks, a.abs().max(b.abs()))
    }

    pub fn zero(marks: &MarkSpace) -> Self {
        Self::constant(0.0, marks)
    }

    pub fn constant(c: f64, marks: &MarkSpace) -> Self {
        Self::new("constant", move |_, _, _, _, _| c, vec![0.0; marks.len()], marks, 0.0).expect("zero weights")
    }

    /// `f − delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let shape = match &self.shape {
            Shape::Gamma(h) => {
                let h = h.clone();
                Shape::Gamma(Arc::new(move |t, x, y, z, q| h(t, x, y, z, q) - delta))
            }
            Shape::General(f) => {
                let f = f.clone();
                Shape::General(Arc::new(move |t, x, y, z, psi| f(t, x, y, z, psi) - delta))
            }
        };
        Self { name: format!("{}-{}", self.name, delta), shape, ..self.clone() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn lipschitz_c(&self) -> f64 {
        self.lipschitz_c
    }

    pub fn is_gamma_form(&self) -> bool {
        matches!(self.shape, Shape::Gamma(_))
    }

    pub fn q(&self, psi: &[f64]) -> f64 {
        psi.iter().zip(&self.q_weights).map(|(p, w)| p * w).sum()
    }

    pub fn eval_f(&self, state: &ForwardState<'_>, y: f64, z: f64, psi: &[f64]) -> f64 {
        match &self.shape {
            Shape::Gamma(h) => h(state.t, state, y, z, self.q(psi)),
            Shape::General(f) => f(state.t, state, y, z, psi),
        }
    }

    /// `h` itself; `None` outside the γ-form.
    pub fn eval_h(&self, state: &ForwardState<'_>, y: f64, z: f64, q: f64) -> Option<f64> {
        match &self.shape {
            Shape::Gamma(h) => Some(h(state.t, state, y, z, q)),
            Shape::General(_) => None,
        }
    }

    /// Sampled check of the declared Lipschitz constant in `(y, z)` and of
    /// monotonicity in `q`. Returns the first violating tuple.
    pub fn check_samples(&self, state: &ForwardState<'_>, values: &[f64]) -> Result<(), BsdeError> {
        let Shape::Gamma(h) = &self.shape else {
            return Ok(());
        };
        let t = state.t;
        for &y in values {
            for &z in values {
                for &q in values {
                    let base = h(t, state, y, z, q);
                    for &d in &[0.5, -1.0, 2.0] {
                        let dy = (h(t, state, y + d, z, q) - base).abs();
                        let dz = (h(t, state, y, z + d, q) - base).abs();
                        let bound = self.lipschitz_c * d.abs() * (1.0 + 1e-12) + 1e-12;
                        if dy > bound || dz > bound {
                            return Err(BsdeError::InvalidDriver(format!(
                                "Lipschitz bound {} violated near (t, y, z, q) = ({t}, {y}, {z}, {q})",
                                self.lipschitz_c
                            )));
                        }
                    }
                    if h(t, state, y, z, q + 1.0) < base - 1e-12 {
                        return Err(BsdeError::InvalidDriver(format!(
                            "h decreasing in q at (t, y, z, q) = ({t}, {y}, {z}, {q})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Generator for DriverSpec {
    fn eval(&self, state: &ForwardState<'_>, y: f64, z: f64, psi: &[f64]) -> Result<f64, BsdeError> {
        Ok(self.eval_f(state, y, z, psi))
    }

    fn y_lipschitz(&self) -> f64 {
        self.lipschitz_c
    }
}
