use serde::Serialize;

use super::{GrowthEnvelope, MonotoneFamily, SignMode};
use crate::scenario::TimeGrid;

/// Finest midpoint refinement per grid cell is `2^MAX_REFINE`.
const MAX_REFINE: u32 = 6;
/// Ratio of successive quadrature increments above which the integral is
/// declared divergent. Convergent singular integrands like `(T−s)^{-1/2}`
/// give about `0.71`, the borderline `(T−s)^{-1}` gives `1`.
const DIVERGENCE_RATIO: f64 = 0.95;
const X_SAMPLES: [f64; 13] = [-10.0, -5.0, -2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationItem {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    /// Offending `(t, x)` sample on failure.
    pub witness: Option<(f64, f64)>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn item(&self, name: &str) -> Option<&ValidationItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items.iter().filter(|i| !i.pass)
    }

    fn push(
        &mut self,
        name: impl Into<String>,
        pass: bool,
        statistic: f64,
        witness: Option<(f64, f64)>,
        detail: impl Into<String>,
    ) {
        self.items.push(ValidationItem { name: name.into(), pass, statistic, witness, detail: detail.into() });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Quadrature {
    pub value: f64,
    pub divergent: bool,
}

/// Composite midpoint rule for `∫_0^T g(s) ds` on the grid, each cell split
/// into `2^k` pieces for `k = 0..=MAX_REFINE`.
pub(crate) fn midpoint_integral(grid: &TimeGrid, g: impl Fn(f64) -> f64) -> Quadrature {
    let mut sums = Vec::with_capacity(MAX_REFINE as usize + 1);
    for k in 0..=MAX_REFINE {
        let pieces = 1usize << k;
        let mut s = 0.0;
        for i in 0..grid.n_steps() {
            let h = grid.dt(i) / pieces as f64;
            for p in 0..pieces {
                s += g(grid.time(i) + (p as f64 + 0.5) * h) * h;
            }
        }
        if !s.is_finite() {
            return Quadrature { value: s, divergent: true };
        }
        sums.push(s);
    }
    let d: Vec<f64> = sums.windows(2).map(|w| w[1] - w[0]).collect();
    let last = d[d.len() - 1].abs();
    let prev = d[d.len() - 2].abs();
    let scale = 1e-12 * (1.0 + sums[sums.len() - 1].abs());
    let divergent = last > scale && last > DIVERGENCE_RATIO * prev;
    Quadrature { value: sums[sums.len() - 1], divergent }
}

/// Diagnostic checks of the structural invariants of `family`, the
/// integrability conditions at the probe points and, when an envelope is
/// given, the growth assumption. Never errors; every failed item carries
/// the offending sample.
pub fn validate_assumptions(
    family: &MonotoneFamily,
    envelope: Option<&GrowthEnvelope>,
    grid: &TimeGrid,
    probe_points: &[f64],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let times = grid.times();
    // t = T is excluded from pointwise family checks: singular families are
    // only required to be integrable in time.
    let inner_times = &times[..times.len() - 1];

    structural_checks(family, inner_times, &mut report);

    let sup_a = times.iter().map(|&t| family.boundary(t).0).fold(f64::NEG_INFINITY, f64::max);
    let bad_probe = probe_points.iter().copied().find(|&y| !(y > sup_a));
    report.push(
        "probe_domain",
        bad_probe.is_none() && !probe_points.is_empty(),
        sup_a,
        bad_probe.map(|y| (f64::NAN, y)),
        if probe_points.is_empty() { "no probe points" } else { "probes must exceed sup_t a_t" },
    );

    let mut worst_b1: Option<(f64, f64)> = None;
    let mut max_b1 = 0.0f64;
    let mut best_b2 = f64::INFINITY;
    let mut b2_ok = false;
    for &y in probe_points.iter().filter(|&&y| y > sup_a) {
        let q1 = midpoint_integral(grid, |s| family.body(s, y).abs());
        if q1.divergent {
            worst_b1.get_or_insert((f64::NAN, y));
        } else {
            max_b1 = max_b1.max(q1.value);
        }
        let q2 = midpoint_integral(grid, |s| family.body(s, y).powi(2));
        if !q2.divergent {
            b2_ok = true;
            best_b2 = best_b2.min(q2.value);
        }
    }
    report.push(
        "B1_local_integrability",
        worst_b1.is_none(),
        if worst_b1.is_some() { f64::INFINITY } else { max_b1 },
        worst_b1,
        "midpoint estimate of the time integral of |k(s,y)| per probe",
    );
    let b2_witness = if b2_ok { None } else { probe_points.first().map(|&y| (f64::NAN, y)) };
    report.push("B2_square_integrability", b2_ok, best_b2, b2_witness, "some probe z with finite time integral of k(s,z)^2");

    if let Some(env) = envelope {
        envelope_checks(family, env, grid, probe_points, &mut report);
    }
    report
}

fn family_samples(family: &MonotoneFamily, t: f64) -> Vec<f64> {
    let (a, inside) = family.boundary(t);
    let mut xs: Vec<f64> = if a.is_finite() {
        let mut v: Vec<f64> = X_SAMPLES.iter().map(|d| a + d.abs()).filter(|&x| x > a).collect();
        if inside {
            v.push(a);
        }
        v.extend(X_SAMPLES.iter().copied().filter(|&x| x > a));
        v
    } else {
        X_SAMPLES.to_vec()
    };
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

fn structural_checks(family: &MonotoneFamily, times: &[f64], report: &mut ValidationReport) {
    let mut mono: Option<(f64, f64)> = None;
    let mut left: Option<(f64, f64)> = None;
    let mut sign: Option<(f64, f64)> = None;
    let mut bnd: Option<(f64, f64)> = None;
    let mut worst_sign = f64::NEG_INFINITY;
    for &t in times {
        let xs = family_samples(family, t);
        let vals: Vec<f64> = xs.iter().map(|&x| family.body(t, x)).collect();
        for w in 0..vals.len().saturating_sub(1) {
            if vals[w] > vals[w + 1] && mono.is_none() {
                mono = Some((t, xs[w]));
            }
        }
        let (a, inside) = family.boundary(t);
        for (&x, &v) in xs.iter().zip(&vals) {
            if x > a && family.left_limit(t, x) > v + 1e-12 && left.is_none() {
                left = Some((t, x));
            }
            if family.sign_mode() == SignMode::NegativeValued {
                worst_sign = worst_sign.max(v);
                if v > 0.0 && sign.is_none() {
                    sign = Some((t, x));
                }
            }
        }
        if inside && !(a.is_finite() && family.body(t, a).is_finite()) && bnd.is_none() {
            bnd = Some((t, a));
        }
    }
    report.push("family_monotone", mono.is_none(), 0.0, mono, "k(t,.) nondecreasing on sampled points");
    report.push("left_limit_below", left.is_none(), 0.0, left, "k_-(t,x) <= k(t,x) at interior samples");
    if family.sign_mode() == SignMode::NegativeValued {
        report.push("negative_valued", sign.is_none(), worst_sign, sign, "k <= 0 on sampled points");
    }
    report.push("boundary_membership", bnd.is_none(), 0.0, bnd, "boundary in domain requires a finite limit of k");
}

fn envelope_checks(
    family: &MonotoneFamily,
    env: &GrowthEnvelope,
    grid: &TimeGrid,
    probes: &[f64],
    report: &mut ValidationReport,
) {
    let times = grid.times();
    let horizon = grid.horizon();
    let mut xs: Vec<f64> = X_SAMPLES.iter().chain(probes).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut dominance: Option<(f64, f64)> = None;
    let mut worst_excess = f64::NEG_INFINITY;
    for &t in &times[..times.len() - 1] {
        for &x in xs.iter().filter(|&&x| family.in_domain(t, x)) {
            let excess = family.body(t, x).max(0.0) - env.eval(t, x);
            worst_excess = worst_excess.max(excess);
            if excess > 1e-12 && dominance.is_none() {
                dominance = Some((t, x));
            }
        }
    }
    report.push("C_dominance", dominance.is_none(), worst_excess, dominance, "(k(t,x))^+ <= l(t,x)");

    let terminal = xs.iter().copied().find(|&x| env.eval(horizon, x) != 0.0);
    report.push(
        "C_terminal_zero",
        terminal.is_none(),
        terminal.map_or(0.0, |x| env.eval(horizon, x)),
        terminal.map(|x| (horizon, x)),
        "l(T,x) = 0",
    );

    let mut positive: Option<(f64, f64)> = None;
    let mut mono_x: Option<(f64, f64)> = None;
    let mut mono_t: Option<(f64, f64)> = None;
    let mut growth: Option<(f64, f64)> = None;
    let mut right_cont: Option<(f64, f64)> = None;
    let c = env.linear_growth_constant();
    for (ti, &t) in times.iter().enumerate() {
        let vals: Vec<f64> = xs.iter().map(|&x| env.eval(t, x)).collect();
        for (xi, &x) in xs.iter().enumerate() {
            let v = vals[xi];
            if ti + 1 < times.len() && !(v > 0.0) && positive.is_none() {
                positive = Some((t, x));
            }
            if xi + 1 < xs.len() && v > vals[xi + 1] && mono_x.is_none() {
                mono_x = Some((t, x));
            }
            if ti + 1 < times.len() && env.eval(times[ti + 1], x) > v && mono_t.is_none() {
                mono_t = Some((t, x));
            }
            if v > c * (1.0 + x.abs()) + 1e-12 && growth.is_none() {
                growth = Some((t, x));
            }
            let drift = (env.eval(t, x + 1e-9) - v).abs();
            if drift > 1e-6 * (1.0 + v.abs()) && right_cont.is_none() {
                right_cont = Some((t, x));
            }
        }
    }
    report.push("C_positive_before_T", positive.is_none(), 0.0, positive, "l(t,x) > 0 for t < T");
    report.push("C_increasing_in_x", mono_x.is_none(), 0.0, mono_x, "l(t,.) nondecreasing");
    report.push("C_nonincreasing_in_t", mono_t.is_none(), 0.0, mono_t, "l(.,x) nonincreasing, forced by l(T,.) = 0 < l(t,.)");
    report.push("C_linear_growth", growth.is_none(), c, growth, "l(t,x) <= C(1+|x|)");
    report.push("C_right_continuous", right_cont.is_none(), 0.0, right_cont, "l(t,x+) = l(t,x) at samples");
}
