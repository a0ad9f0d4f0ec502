//! Experiment configuration read from TOML.
//!
//! ```toml
//! [model]        # ModelSpec
//! [criterion]    # kind = "discounted" | "ergodic" | "exit" | "finite_horizon", x0 = [..]
//! [grid]         # state grid for the finite-difference solvers
//! [sim]          # Monte Carlo settings
//! [schedule]     # quantization schedule for the studies
//! [[bank]]       # Borkar test pairs (a default bank is used when absent)
//! [policy]       # the policy for `eval`, `quantize` and `pairing`
//! [output]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::borkar::{build_bank, default_bank, TestPair, TestPairSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::model::{ControlModel, ModelSpec};
use crate::policy::{build_action_grid, ActionGrid, Policy, PolicyJson};
use crate::simulate::{Criterion, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSection {
    pub kind: String,
    /// Initial state at which costs are reported.
    pub x0: Vec<f64>,
}

fn default_n_paths() -> usize {
    10_000
}

fn default_radius() -> f64 {
    100.0
}

fn default_max_time() -> f64 {
    1e3
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub truncation_radius: f64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "one")]
    pub noise_substeps: usize,
    /// Truncation time of the discounted integral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Averaging window of the ergodic estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_avg: Option<f64>,
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            truncation_radius: self.truncation_radius,
            max_time: self.max_time,
            noise_substeps: self.noise_substeps,
        }
    }
}

fn default_reference_n() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Action-grid resolutions, strictly increasing.
    #[serde(default)]
    pub n: Vec<usize>,
    /// Simplex resolutions for the space-quantized rows, strictly increasing.
    #[serde(default)]
    pub m: Vec<usize>,
    /// Time steps, strictly decreasing (coarse to fine).
    #[serde(default)]
    pub dt: Vec<f64>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    /// Defaults to a quarter of the smallest `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_dt: Option<f64>,
    /// Cells for the space-quantized rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_grid: Option<GridSpec>,
    /// Also estimate every row by Monte Carlo.
    #[serde(default)]
    pub mc: bool,
}

impl ScheduleSection {
    pub fn reference_dt(&self) -> Option<f64> {
        self.reference_dt.or_else(|| self.dt.iter().copied().reduce(f64::min).map(|d| d / 4.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::config("output.format", format!("expected csv or json, got `{s}`"))),
        }
    }
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Results go to stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, format: default_format() }
    }
}

fn default_policy_n() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// `u = clamp(e(x, t))`, one expression per action component.
    Feedback,
    /// The atom nearest to `action`.
    Constant,
    /// A policy JSON file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    #[serde(default)]
    pub exprs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Action-grid resolution for feedback and constant policies.
    #[serde(default = "default_policy_n")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub criterion: CriterionSection,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSection>,
    /// Quadrature grid for the test pairs; the state grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bank: Vec<TestPairSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg = Self::parse_toml(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deserializes without [`validate`](Self::validate), so that callers can
    /// apply overrides first.
    pub fn parse_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::config(toml_error_field(&e), e.message().to_string()))
    }

    /// Reads and validates a config file. A relative `policy.path` is
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::load_unvalidated(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_unvalidated(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse_toml(&src)?;
        if let (Some(p), Some(dir)) = (cfg.policy.as_mut(), path.parent()) {
            if let Some(file) = p.path.as_mut().filter(|f| f.is_relative()) {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.criterion.kind.parse().map_err(|m: String| Error::config("criterion.kind", m))
    }

    /// Structural checks: every expression parses, sections are consistent
    /// with the model and the criterion, schedule lists are ordered.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let criterion = self.criterion()?;
        if self.criterion.x0.len() != model.dim_x() {
            return Err(Error::config(
                "criterion.x0",
                format!("needs {} components, got {}", model.dim_x(), self.criterion.x0.len()),
            ));
        }
        let needed = match criterion {
            Criterion::Discounted => model.alpha().is_none().then_some("model.alpha"),
            Criterion::FiniteHorizon => model.horizon().is_none().then_some("model.horizon"),
            Criterion::Exit => model.exit().is_none().then_some("model.exit"),
            Criterion::Ergodic => None,
        };
        if let Some(field) = needed {
            return Err(Error::config(field, format!("required by the {criterion} criterion")));
        }
        let grid = self.grid()?;
        if grid.dim() != model.dim_x() {
            return Err(Error::config("grid", format!("has dimension {}, model has {}", grid.dim(), model.dim_x())));
        }
        if let Some(sim) = &self.sim {
            sim.sim_config().validate().map_err(|e| Error::config("sim", e.to_string()))?;
            for (name, v) in [("sim.t_max", sim.t_max), ("sim.t_avg", sim.t_avg)] {
                if matches!(v, Some(t) if !(t > 0.0 && t.is_finite())) {
                    return Err(Error::config(name, "must be positive"));
                }
            }
            if matches!(sim.burn_in, Some(t) if !(t >= 0.0 && t.is_finite())) {
                return Err(Error::config("sim.burn_in", "must be nonnegative"));
            }
        }
        if let Some(s) = &self.schedule {
            self.validate_schedule(s)?;
        }
        if self.quadrature.is_some() {
            self.quadrature()?;
        }
        for (i, spec) in self.bank.iter().enumerate() {
            TestPair::new(spec.clone(), model.dim_x(), model.dim_u(), grid.clone())
                .map_err(|e| Error::config(format!("bank[{i}]"), e.to_string()))?;
        }
        if let Some(p) = &self.policy {
            if p.kind != PolicyKind::File {
                self.policy(&model)?;
            } else if p.path.is_none() {
                return Err(Error::config("policy.path", "required for kind = \"file\""));
            }
        }
        Ok(())
    }

    fn validate_schedule(&self, s: &ScheduleSection) -> Result<()> {
        if s.n.contains(&0) || !strictly_increasing(&s.n) {
            return Err(Error::config("schedule.n", "must be positive and strictly increasing"));
        }
        if s.m.contains(&0) || !strictly_increasing(&s.m) {
            return Err(Error::config("schedule.m", "must be positive and strictly increasing"));
        }
        if s.dt.iter().any(|d| !(*d > 0.0 && d.is_finite())) || !s.dt.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::config("schedule.dt", "must be positive and strictly decreasing"));
        }
        if let Some(&max_n) = s.n.last() {
            if s.reference_n <= max_n {
                return Err(Error::ScheduleTooCoarse { entry: max_n as f64, reference: s.reference_n as f64 });
            }
        }
        if let (Some(&min_dt), Some(r)) = (s.dt.last(), s.reference_dt()) {
            if !(r > 0.0) || r >= min_dt {
                return Err(Error::ScheduleTooCoarse { entry: min_dt, reference: r });
            }
        }
        if !s.m.is_empty() {
            let spec = s
                .cell_grid
                .as_ref()
                .ok_or_else(|| Error::config("schedule.cell_grid", "required when schedule.m is set"))?;
            let g = Grid::new(spec.clone()).map_err(|e| Error::config("schedule.cell_grid", e.to_string()))?;
            if g.dim() != self.model.dim_x {
                return Err(Error::config("schedule.cell_grid", "dimension differs from the model"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ControlModel> {
        ControlModel::from_spec(self.model.clone()).map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("model", other.to_string()),
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.clone()).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn quadrature(&self) -> Result<Grid> {
        match &self.quadrature {
            Some(spec) => Grid::new(spec.clone()).map_err(|e| Error::config("quadrature", e.to_string())),
            None => self.grid(),
        }
    }

    pub fn sim(&self) -> Result<&SimSection> {
        self.sim.as_ref().ok_or_else(|| Error::config("sim", "section is required"))
    }

    pub fn schedule(&self) -> Result<&ScheduleSection> {
        self.schedule.as_ref().ok_or_else(|| Error::config("schedule", "section is required"))
    }

    /// The configured test pairs, or the default bank.
    pub fn bank(&self, model: &ControlModel) -> Result<Vec<TestPair>> {
        let specs = if self.bank.is_empty() { default_bank(model.dim_x(), model.dim_u()) } else { self.bank.clone() };
        build_bank(&specs, model.dim_x(), model.dim_u(), &self.quadrature()?)
    }

    /// The `[policy]` section as a policy on `model`.
    pub fn policy(&self, model: &ControlModel) -> Result<Policy> {
        let p = self.policy.as_ref().ok_or_else(|| Error::config("policy", "section is required"))?;
        if p.n == 0 {
            return Err(Error::config("policy.n", "must be positive"));
        }
        let grid = || Arc::new(build_action_grid(model.action_box(), p.n));
        match p.kind {
            PolicyKind::Feedback => Policy::feedback("feedback", grid(), model.dim_x(), &p.exprs)
                .map_err(|e| Error::config("policy.exprs", e.to_string())),
            PolicyKind::Constant => {
                let a = p
                    .action
                    .as_ref()
                    .ok_or_else(|| Error::config("policy.action", "required for kind = \"constant\""))?;
                let g: Arc<ActionGrid> = grid();
                let atom = g.nearest_action(a).map_err(|e| Error::config("policy.action", e.to_string()))?;
                Ok(Policy::constant_atom(g, atom))
            }
            PolicyKind::File => {
                let path =
                    p.path.as_ref().ok_or_else(|| Error::config("policy.path", "required for kind = \"file\""))?;
                let src = std::fs::read_to_string(path)?;
                let json: PolicyJson =
                    serde_json::from_str(&src).map_err(|e| Error::config("policy.path", e.to_string()))?;
                json.into_policy()
            }
        }
    }
}

/// Dotted path of the offending key, when toml reports a location.
fn toml_error_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
id = "lq"
dim_x = 1
action_low = [-4.0]
action_high = [4.0]
drift = ["-x1 + u1"]
sigma = [["sqrt(2)"]]
cost = "x1^2 + u1^2"
alpha = 1.0

[criterion]
kind = "discounted"
x0 = [0.0]

[grid]
low = [-6.0]
high = [6.0]
points = [121]
"#;

    fn with(extra: &str) -> String {
        format!("{BASE}\n{extra}")
    }

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_loads() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.criterion().unwrap(), Criterion::Discounted);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.bank(&cfg.model().unwrap()).unwrap().len(), 6);
    }

    #[test]
    fn unknown_criterion_names_the_field() {
        let src = BASE.replace("kind = \"discounted\"", "kind = \"average\"");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&src).unwrap_err()), "criterion.kind");
    }

    #[test]
    fn criterion_requirements() {
        let src = BASE.replace("kind = \"discounted\"", "kind = \"exit\"");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&src).unwrap_err()), "model.exit");
        let src = BASE.replace("x0 = [0.0]", "x0 = [0.0, 1.0]");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&src).unwrap_err()), "criterion.x0");
    }

    #[test]
    fn bad_expression_is_a_config_error() {
        let src = BASE.replace("x1^2 + u1^2", "x1^2 + u3");
        let e = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert!(e.is_config_error());
        assert_eq!(field_of(e), "model");
    }

    #[test]
    fn missing_and_unknown_keys() {
        let src = BASE.replace("cost = \"x1^2 + u1^2\"\n", "");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&src).unwrap_err()), "cost");
        let e = ExperimentConfig::from_toml_str(&with("[output]\nfmt = \"csv\"")).unwrap_err();
        assert_eq!(field_of(e), "fmt");
    }

    #[test]
    fn schedule_ordering_and_reference() {
        let ok = with("[schedule]\nn = [2, 4, 8]\ndt = [0.2, 0.1]\n");
        let cfg = ExperimentConfig::from_toml_str(&ok).unwrap();
        assert_eq!(cfg.schedule().unwrap().reference_dt(), Some(0.025));
        let e = ExperimentConfig::from_toml_str(&with("[schedule]\nn = [4, 2]\n")).unwrap_err();
        assert_eq!(field_of(e), "schedule.n");
        let e = ExperimentConfig::from_toml_str(&with("[schedule]\ndt = [0.1, 0.2]\n")).unwrap_err();
        assert_eq!(field_of(e), "schedule.dt");
        let e = ExperimentConfig::from_toml_str(&with("[schedule]\nn = [2, 300]\n")).unwrap_err();
        assert!(matches!(e, Error::ScheduleTooCoarse { .. }));
        let e = ExperimentConfig::from_toml_str(&with("[schedule]\ndt = [0.1]\nreference_dt = 0.1\n")).unwrap_err();
        assert!(matches!(e, Error::ScheduleTooCoarse { .. }));
        let e = ExperimentConfig::from_toml_str(&with("[schedule]\nn = [2]\nm = [1]\n")).unwrap_err();
        assert_eq!(field_of(e), "schedule.cell_grid");
    }

    #[test]
    fn policy_section() {
        let cfg =
            ExperimentConfig::from_toml_str(&with("[policy]\nkind = \"feedback\"\nexprs = [\"-0.3 * x1\"]\nn = 10\n"))
                .unwrap();
        let m = cfg.model().unwrap();
        let p = cfg.policy(&m).unwrap();
        assert!(p.is_stationary());
        let e = ExperimentConfig::from_toml_str(&with("[policy]\nkind = \"constant\"\n")).unwrap_err();
        assert_eq!(field_of(e), "policy.action");
        let e =
            ExperimentConfig::from_toml_str(&with("[policy]\nkind = \"feedback\"\nexprs = [\"x9\"]\n")).unwrap_err();
        assert_eq!(field_of(e), "policy.exprs");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(&with("[sim]\ndt = 0.01\nt_max = 10.0\n")).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
