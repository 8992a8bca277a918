use std::fmt;

use serde::{Deserialize, Serialize};

use super::registry::{driver_by_name, terminal_by_name, RegistryError};
use crate::bsde::{CEBackend, DriverSpec, TerminalSpec};
use crate::mbsde::PenalizationSchedule;
use crate::monotone_ops::{
    envelope_by_name, family_by_name, validate_assumptions, GrowthEnvelope, MonotoneFamily, Params, SignMode,
};
use crate::scenario::{build_tree, simulate_paths, MarkSpace, Scenario, ScenarioError, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarksConfig {
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub intensities: Vec<f64>,
    #[serde(default)]
    pub vartheta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_mode: Option<SignMode>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub name: String,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub levels: Vec<u64>,
    pub stop_tolerance: f64,
    pub eps_mono: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = PenalizationSchedule::default();
        Self { levels: s.levels, stop_tolerance: s.stop_tolerance, eps_mono: s.eps_mono }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnboundedConfig {
    pub levels: Vec<u64>,
}

/// Second problem for the comparison suite; absent parts copy the first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub constraint_tol: f64,
    pub skorokhod_tol: f64,
    pub comparison_tol: f64,
    pub oracle_tol: f64,
    pub lipschitz_tol: f64,
    pub bounds_factor: f64,
    pub boundary_eps: f64,
    /// Offset above `sup_t a_t` of the interior selection.
    pub interior_offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mc_paths: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            constraint_tol: 5e-2,
            skorokhod_tol: 5e-2,
            comparison_tol: 1e-8,
            oracle_tol: 2e-2,
            lipschitz_tol: 1e-2,
            bounds_factor: 10.0,
            boundary_eps: 1e-3,
            interior_offset: 0.5,
            oracle_mc_paths: None,
        }
    }
}

/// A problem `(ξ, f, k)` with its numerics, in TOML form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub grid: GridConfig,
    #[serde(default)]
    pub marks: MarksConfig,
    pub family: FamilyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    pub driver: DriverConfig,
    pub terminal: TerminalConfig,
    pub backend: CEBackend,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unbounded: Option<UnboundedConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Parse { line: usize, message: String },
    UnknownName { line: usize, kind: String, name: String },
    Validation { line: usize, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { line, message } => write!(f, "line {line}: parse error: {message}"),
            Self::UnknownName { line, kind, name } => write!(f, "line {line}: unknown {kind} '{name}'"),
            Self::Validation { line, message } => write!(f, "line {line}: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Everything a run needs, built from a config.
#[derive(Clone)]
pub struct BuiltProblem {
    pub grid: TimeGrid,
    pub marks: MarkSpace,
    pub family: MonotoneFamily,
    pub envelope: Option<GrowthEnvelope>,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub backend: CEBackend,
    pub schedule: PenalizationSchedule,
    pub unbounded_levels: Vec<u64>,
}

impl BuiltProblem {
    /// Tree for the exact backend, simulated paths otherwise.
    pub fn scenario(&self, seed: u64, n_paths: usize) -> Result<Scenario, ScenarioError> {
        Ok(match self.backend {
            CEBackend::TreeExact => Scenario::from(build_tree(&self.grid, &self.marks)?),
            CEBackend::Regression { .. } => Scenario::from(simulate_paths(&self.grid, &self.marks, n_paths, seed)),
        })
    }
}

/// A problem found at `(section, key)` of the source.
struct Issue {
    section: &'static str,
    key: &'static str,
    kind: IssueKind,
}

enum IssueKind {
    Unknown { kind: String, name: String },
    Invalid(String),
}

fn invalid(section: &'static str, key: &'static str, msg: impl Into<String>) -> Issue {
    Issue { section, key, kind: IssueKind::Invalid(msg.into()) }
}

fn from_registry(section: &'static str, e: RegistryError) -> Issue {
    match e {
        RegistryError::UnknownName { kind, name } => {
            Issue { section, key: "name", kind: IssueKind::Unknown { kind: kind.into(), name } }
        }
        RegistryError::BadParameter(msg) => invalid(section, "params", msg),
    }
}

/// Probe ordinates strictly inside every domain on the grid.
pub fn probe_points(family: &MonotoneFamily, grid: &TimeGrid) -> Vec<f64> {
    let sup_a = grid.times().iter().map(|&t| family.boundary(t).0).fold(f64::NEG_INFINITY, f64::max);
    if sup_a.is_finite() {
        vec![sup_a + 0.5, sup_a + 1.0, sup_a + 2.0]
    } else {
        vec![-1.0, 0.0, 1.0]
    }
}

impl ProblemConfig {
    fn assemble(&self) -> Result<BuiltProblem, Vec<Issue>> {
        let mut issues = Vec::new();
        let grid = match (&self.grid.times, self.grid.horizon, self.grid.steps) {
            (Some(times), None, None) => TimeGrid::new(times.clone()),
            (None, Some(h), Some(n)) => TimeGrid::uniform(h, n),
            _ => {
                issues.push(invalid("grid", "", "give either `times` or both `horizon` and `steps`"));
                return Err(issues);
            }
        };
        let grid = grid.map_err(|e| vec![invalid("grid", "", e.to_string())])?;
        let m = &self.marks;
        let marks = if m.values.is_empty() && m.intensities.is_empty() && m.vartheta.is_empty() {
            MarkSpace::empty()
        } else {
            MarkSpace::new(m.values.clone(), m.intensities.clone(), m.vartheta.clone())
                .map_err(|e| vec![invalid("marks", "intensities", e.to_string())])?
        };
        let horizon = grid.horizon();

        let family =
            family_by_name(&self.family.name, &self.family.params, horizon).map_err(|e| from_registry("family", e.into()));
        let family = match family {
            Ok(f) => {
                if let Some(mode) = self.family.sign_mode {
                    if mode != f.sign_mode() {
                        issues.push(invalid(
                            "family",
                            "sign_mode",
                            format!("'{}' is {:?}, config says {mode:?}", f.name(), f.sign_mode()),
                        ));
                    }
                }
                Some(f)
            }
            Err(i) => {
                issues.push(i);
                None
            }
        };
        let envelope = match &self.envelope {
            Some(e) => match envelope_by_name(&e.name, &e.params, horizon) {
                Ok(env) => Some(env),
                Err(err) => {
                    issues.push(from_registry("envelope", err.into()));
                    None
                }
            },
            None => None,
        };
        let driver = driver_by_name(&self.driver.name, &self.driver.params, &self.driver.gamma, &marks)
            .map_err(|e| from_registry("driver", e))
            .map_err(|i| issues.push(i))
            .ok();
        let terminal = terminal_by_name(&self.terminal.name, &self.terminal.params, &marks)
            .map(|t| match self.terminal.lower_bound {
                Some(a) => t.with_lower_bound(a),
                None => t,
            })
            .map_err(|e| from_registry("terminal", e))
            .map_err(|i| issues.push(i))
            .ok();
        if let CEBackend::Regression { degree, ridge } = self.backend {
            if degree == 0 {
                issues.push(invalid("backend", "degree", "degree must be >= 1"));
            }
            if ridge.is_some_and(|r| !(r >= 0.0)) {
                issues.push(invalid("backend", "ridge", "ridge must be >= 0"));
            }
            if self.n_paths == 0 {
                issues.push(invalid("", "n_paths", "n_paths must be >= 1"));
            }
        }
        let sc = &self.schedule;
        let schedule = PenalizationSchedule {
            levels: sc.levels.clone(),
            stop_tolerance: sc.stop_tolerance,
            eps_mono: sc.eps_mono,
            max_level: sc.levels.last().copied().unwrap_or(0),
        };
        if let Err(e) = schedule.validate() {
            issues.push(invalid("schedule", "levels", e.to_string()));
        }
        let unbounded_levels = self.unbounded.as_ref().map_or_else(|| (1..=16).collect(), |u| u.levels.clone());
        if unbounded_levels.is_empty() || unbounded_levels[0] == 0 || unbounded_levels.windows(2).any(|w| w[1] <= w[0]) {
            issues.push(invalid("unbounded", "levels", "levels must be nonempty, >= 1 and strictly increasing"));
        }
        if let Some(cmp) = &self.compare {
            if let Some(f) = &cmp.family {
                if let Err(e) = family_by_name(&f.name, &f.params, horizon) {
                    issues.push(from_registry("compare.family", e.into()));
                }
            }
            if let Some(d) = &cmp.driver {
                if let Err(e) = driver_by_name(&d.name, &d.params, &d.gamma, &marks) {
                    issues.push(from_registry("compare.driver", e));
                }
            }
            if let Some(t) = &cmp.terminal {
                if let Err(e) = terminal_by_name(&t.name, &t.params, &marks) {
                    issues.push(from_registry("compare.terminal", e));
                }
            }
        }
        if let Some(fam) = &family {
            let report = validate_assumptions(fam, envelope.as_ref(), &grid, &probe_points(fam, &grid));
            for item in report.failures() {
                issues.push(invalid("family", "name", format!("assumption check '{}' failed: {}", item.name, item.detail)));
            }
        }
        match (family, driver, terminal) {
            (Some(family), Some(driver), Some(terminal)) if issues.is_empty() => Ok(BuiltProblem {
                grid,
                marks,
                family,
                envelope,
                driver,
                terminal,
                backend: self.backend,
                schedule,
                unbounded_levels,
            }),
            _ => Err(issues),
        }
    }

    /// Builds without a source text; errors carry line 0.
    pub fn build(&self) -> Result<BuiltProblem, ConfigErrors> {
        self.assemble().map_err(|issues| locate_all(None, issues))
    }

    /// The second problem of the comparison suite.
    pub fn compare_problem(&self) -> Option<ProblemConfig> {
        let cmp = self.compare.as_ref()?;
        let mut other = self.clone();
        other.compare = None;
        if let Some(f) = &cmp.family {
            other.family = f.clone();
        }
        if let Some(d) = &cmp.driver {
            other.driver = d.clone();
        }
        if let Some(t) = &cmp.terminal {
            other.terminal = t.clone();
        }
        Some(other)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config renders")
    }
}

/// 1-based line of `key` inside `[section]` (top level for an empty section),
/// else the section header, else 1.
fn line_of(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header.get_or_insert(n + 1);
            }
            continue;
        }
        let sub_of = !section.is_empty() && current.strip_prefix(section).is_some_and(|r| r.starts_with('.'));
        if current == section || (sub_of && key == "params") {
            let k = line.split('=').next().unwrap_or("").trim();
            if !key.is_empty() && (k == key || (sub_of && key == "params" && !k.is_empty())) {
                return n + 1;
            }
        }
    }
    header.unwrap_or(1)
}

fn locate_all(text: Option<&str>, issues: Vec<Issue>) -> ConfigErrors {
    ConfigErrors(
        issues
            .into_iter()
            .map(|i| {
                let line = text.map_or(0, |t| line_of(t, i.section, i.key));
                match i.kind {
                    IssueKind::Unknown { kind, name } => ConfigError::UnknownName { line, kind, name },
                    IssueKind::Invalid(message) => ConfigError::Validation { line, message },
                }
            })
            .collect(),
    )
}

fn byte_line(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses and fully validates a config, including the assumption checks on
/// the operator family.
pub fn parse_config(text: &str) -> Result<ProblemConfig, ConfigErrors> {
    let config: ProblemConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| byte_line(text, s.start));
        ConfigErrors(vec![ConfigError::Parse { line, message: e.message().to_string() }])
    })?;
    config.assemble().map_err(|issues| locate_all(Some(text), issues))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const REFLECTED: &str = r#"seed = 7
n_paths = 1000

[grid]
horizon = 1.0
steps = 4

[family]
name = "reflect_at"

[family.params]
a = 0.0

[driver]
name = "zero"

[terminal]
name = "brownian"

[backend]
kind = "tree_exact"

[schedule]
levels = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096]
stop_tolerance = 1e-3
eps_mono = 1e-8
"#;

    #[test]
    fn golden_reflected_config() {
        let c = parse_config(REFLECTED).unwrap();
        assert_eq!(c.family.name, "reflect_at");
        assert_eq!(c.backend, CEBackend::TreeExact);
        assert_eq!(parse_config(&c.render()).unwrap(), c);
    }

    #[test]
    fn unknown_family_has_line() {
        let text = REFLECTED.replace("\"reflect_at\"", "\"does_not_exist\"");
        let errs = parse_config(&text).unwrap_err();
        assert_eq!(errs.0, vec![ConfigError::UnknownName { line: 9, kind: "family".into(), name: "does_not_exist".into() }]);
    }

    #[test]
    fn negative_intensity_is_invalid() {
        let text = REFLECTED.replace("[family]", "[marks]\nvalues = [1.0]\nintensities = [-1.0]\nvartheta = [1.0]\n\n[family]");
        let errs = parse_config(&text).unwrap_err();
        assert!(matches!(&errs.0[0], ConfigError::Validation { line: 10, .. }), "{errs}");
    }

    #[test]
    fn syntax_error_has_line() {
        let text = REFLECTED.replace("steps = 4", "steps = = 4");
        let errs = parse_config(&text).unwrap_err();
        assert!(matches!(errs.0[0], ConfigError::Parse { line: 6, .. }), "{errs}");
    }

    #[test]
    fn singular_family_fails_validation() {
        let text = REFLECTED.replace("\"reflect_at\"", "\"sqrt_singular\"").replace("a = 0.0\n", "");
        let errs = parse_config(&text).unwrap_err();
        assert!(errs.to_string().contains("B2_square_integrability"), "{errs}");
    }

    #[test]
    fn mode_mismatch_in_sign_mode_key() {
        let text = REFLECTED.replace("name = \"reflect_at\"", "name = \"reflect_at\"\nsign_mode = \"real_valued\"");
        assert!(parse_config(&text).is_err());
    }
}
