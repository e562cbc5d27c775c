//! Job configuration: a single human-editable TOML file per job, plus the
//! shipped figure presets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acceptance::AcceptanceConfig;
use crate::error::{Error, Result};
use crate::lineshape::{LineshapeParams, PulseSpec};
use crate::metrology::{DerivativeMode, ObservableKind};
use crate::optimizer::{AxisSpec, CrossoverConfig, OptimizeSpec, OptimizeTarget, SweepPlan};
use crate::states::ProbeFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Lineshape,
    Curve,
    Sweep,
    Optimize,
    Crossover,
    Accept,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Lineshape => "lineshape",
            Command::Curve => "curve",
            Command::Sweep => "sweep",
            Command::Optimize => "optimize",
            Command::Crossover => "crossover",
            Command::Accept => "accept",
        }
    }
}

/// Grid descriptions accepted in configs: explicit values, log-spaced, or
/// linear.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GridSpec {
    Explicit { values: Vec<f64> },
    Log { log_start: f64, log_stop: f64, points: usize },
    Linear { start: f64, stop: f64, points: usize },
}

impl GridSpec {
    pub fn expand(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::Explicit { values } => Ok(values.clone()),
            GridSpec::Log { log_start, log_stop, points } => {
                if *points < 1 || *log_start <= 0.0 || *log_stop <= 0.0 {
                    return Err(Error::Config(format!(
                        "bad log grid [{log_start}, {log_stop}] x {points}"
                    )));
                }
                if *points == 1 {
                    return Ok(vec![*log_start]);
                }
                let (a, b) = (log_start.ln(), log_stop.ln());
                Ok((0..*points)
                    .map(|i| (a + (b - a) * i as f64 / (*points as f64 - 1.0)).exp())
                    .collect())
            }
            GridSpec::Linear { start, stop, points } => {
                if *points < 1 {
                    return Err(Error::Config("linear grid needs at least one point".into()));
                }
                if *points == 1 {
                    return Ok(vec![*start]);
                }
                Ok((0..*points)
                    .map(|i| start + (stop - start) * i as f64 / (*points as f64 - 1.0))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisToml {
    pub param: String,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    #[default]
    Grid,
    Optimized,
}

/// Optimization target in configs: "qfi", { mom = "dn" } or { snr = "n_pr" }.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetToml {
    Name(String),
    Mom { mom: String },
    Snr { snr: String },
}

impl TargetToml {
    pub fn to_target(&self) -> Result<OptimizeTarget> {
        match self {
            TargetToml::Name(s) if s == "qfi" => Ok(OptimizeTarget::Qfi),
            TargetToml::Name(s) => Err(Error::Config(format!(
                "unknown target '{s}' (use \"qfi\", {{ mom = \"obs\" }} or {{ snr = \"obs\" }})"
            ))),
            TargetToml::Mom { mom } => Ok(OptimizeTarget::Mom(ObservableKind::parse(mom)?)),
            TargetToml::Snr { snr } => Ok(OptimizeTarget::Snr(ObservableKind::parse(snr)?)),
        }
    }
}

fn default_eta() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    crate::fock::DEFAULT_EPS_TRUNC
}
fn default_starts() -> usize {
    8
}
fn default_fraction() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.01
}

/// One labeled curve of a figure: either a grid sweep or a per-point
/// probe optimization along an n_tot axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePlanToml {
    pub label: String,
    #[serde(default)]
    pub kind: CurveKind,
    pub family: ProbeFamily,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub axes: Vec<AxisToml>,
    pub observables: Vec<String>,
    #[serde(default = "default_eta")]
    pub eta_pu: f64,
    #[serde(default = "default_eta")]
    pub eta_pr: f64,
    #[serde(default = "default_true")]
    pub compute_qfi: bool,
    #[serde(default)]
    pub use_populations: bool,
    #[serde(default = "default_eps")]
    pub eps_trunc: f64,
    /// Optimized-kind settings.
    #[serde(default)]
    pub target: Option<TargetToml>,
    #[serde(default)]
    pub fixed_n_sq: Option<f64>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_fraction")]
    pub max_probe_fraction: f64,
    #[serde(default)]
    pub derivative: DerivativeMode,
}

impl CurvePlanToml {
    pub fn observables(&self) -> Result<Vec<ObservableKind>> {
        self.observables.iter().map(|s| ObservableKind::parse(s)).collect()
    }

    pub fn to_sweep_plan(&self) -> Result<SweepPlan> {
        let axes = self
            .axes
            .iter()
            .map(|a| Ok(AxisSpec { param: a.param.clone(), grid: a.grid.expand()? }))
            .collect::<Result<Vec<_>>>()?;
        let plan = SweepPlan {
            family: self.family,
            fixed: self.fixed.clone(),
            axes,
            observables: self.observables()?,
            eta_pu: self.eta_pu,
            eta_pr: self.eta_pr,
            compute_qfi: self.compute_qfi,
            use_populations: self.use_populations,
            eps_trunc: self.eps_trunc,
            derivative: self.derivative,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineshapeJob {
    pub params: LineshapeParams,
    pub pump: PulseSpec,
    pub probe: PulseSpec,
    /// Number of |Phi(omega)|^2 samples written over the window.
    #[serde(default = "default_phi_samples")]
    pub phi_samples: usize,
}

fn default_phi_samples() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeJob {
    pub family: ProbeFamily,
    pub n_tot: f64,
    pub gamma_srs: f64,
    #[serde(default)]
    pub h_srs: f64,
    pub target: TargetToml,
    #[serde(default = "default_eta")]
    pub eta_pu: f64,
    #[serde(default = "default_eta")]
    pub eta_pr: f64,
    #[serde(default)]
    pub fixed_n_sq: Option<f64>,
    #[serde(default = "default_fraction")]
    pub max_probe_fraction: f64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_eps")]
    pub eps_trunc: f64,
    #[serde(default)]
    pub derivative: DerivativeMode,
}

impl OptimizeJob {
    pub fn to_spec(&self, seed: u64) -> Result<OptimizeSpec> {
        let mut spec = OptimizeSpec::new(
            self.family,
            self.n_tot,
            self.gamma_srs,
            self.target.to_target()?,
        );
        spec.h = self.h_srs;
        spec.eta_pu = self.eta_pu;
        spec.eta_pr = self.eta_pr;
        spec.fixed_n_sq = self.fixed_n_sq;
        spec.max_probe_fraction = self.max_probe_fraction;
        spec.starts = self.starts;
        spec.seed = seed;
        spec.eps_trunc = self.eps_trunc;
        spec.derivative = self.derivative;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverJob {
    pub family: ProbeFamily,
    pub gammas: GridSpec,
    pub n_tots: GridSpec,
    #[serde(default = "default_threshold")]
    pub threshold_frac: f64,
    pub target: TargetToml,
    #[serde(default = "default_eta")]
    pub eta_pu: f64,
    #[serde(default = "default_eta")]
    pub eta_pr: f64,
    #[serde(default)]
    pub fixed_n_sq: Option<f64>,
    #[serde(default = "default_crossover_fraction")]
    pub max_probe_fraction: f64,
    #[serde(default = "default_crossover_starts")]
    pub starts: usize,
    #[serde(default = "default_eps")]
    pub eps_trunc: f64,
    #[serde(default)]
    pub full_table: bool,
    #[serde(default)]
    pub derivative: DerivativeMode,
    #[serde(default)]
    pub phases_free: bool,
}

fn default_crossover_fraction() -> f64 {
    0.25
}
fn default_crossover_starts() -> usize {
    6
}

impl CrossoverJob {
    pub fn to_config(&self, seed: u64) -> Result<CrossoverConfig> {
        let mut cfg = CrossoverConfig::new(
            self.family,
            self.gammas.expand()?,
            self.n_tots.expand()?,
        );
        cfg.threshold_frac = self.threshold_frac;
        cfg.target = self.target.to_target()?;
        cfg.eta_pu = self.eta_pu;
        cfg.eta_pr = self.eta_pr;
        cfg.fixed_n_sq = self.fixed_n_sq;
        cfg.max_probe_fraction = self.max_probe_fraction;
        cfg.starts = self.starts;
        cfg.seed = seed;
        cfg.eps_trunc = self.eps_trunc;
        cfg.full_table = self.full_table;
        cfg.derivative = self.derivative;
        cfg.phases_free = self.phases_free;
        Ok(cfg)
    }
}

/// A parsed job file: one command plus its table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineshape: Option<LineshapeJob>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "plan")]
    pub plans: Vec<CurvePlanToml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<CurvePlanToml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeJob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover: Option<CrossoverJob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept: Option<AcceptanceConfig>,
}

impl JobConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: JobConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Exactly one command with its matching table; tables for other
    /// commands must be absent.
    pub fn validate(&self) -> Result<()> {
        let mut present = Vec::new();
        if self.lineshape.is_some() {
            present.push(Command::Lineshape);
        }
        if !self.plans.is_empty() {
            present.push(Command::Curve);
        }
        if self.sweep.is_some() {
            present.push(Command::Sweep);
        }
        if self.optimize.is_some() {
            present.push(Command::Optimize);
        }
        if self.crossover.is_some() {
            present.push(Command::Crossover);
        }
        if self.accept.is_some() {
            present.push(Command::Accept);
        }
        for p in &present {
            if *p != self.command {
                return Err(Error::Config(format!(
                    "config declares command '{}' but carries a table for '{}'",
                    self.command.name(),
                    p.name()
                )));
            }
        }
        match self.command {
            Command::Lineshape => {
                let job = self
                    .lineshape
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [lineshape] table".into()))?;
                job.params.validate()?;
                job.pump.validate()?;
                job.probe.validate()?;
                if job.phi_samples < 2 {
                    return Err(Error::Config("phi_samples must be >= 2".into()));
                }
            }
            Command::Curve => {
                if self.plans.is_empty() {
                    return Err(Error::Config("curve command needs at least one [[plan]]".into()));
                }
                let mut labels = std::collections::BTreeSet::new();
                for plan in &self.plans {
                    if !labels.insert(plan.label.clone()) {
                        return Err(Error::Config(format!("duplicate plan label '{}'", plan.label)));
                    }
                    plan.observables()?;
                    match plan.kind {
                        CurveKind::Grid => {
                            plan.to_sweep_plan()?;
                        }
                        CurveKind::Optimized => {
                            if plan.target.is_none() {
                                return Err(Error::Config(format!(
                                    "optimized plan '{}' needs a target",
                                    plan.label
                                )));
                            }
                            plan.target.as_ref().unwrap().to_target()?;
                            if plan.axes.len() != 1 || plan.axes[0].param != "n_tot" {
                                return Err(Error::Config(format!(
                                    "optimized plan '{}' needs exactly one n_tot axis",
                                    plan.label
                                )));
                            }
                            if !plan.fixed.contains_key("gamma_srs") {
                                return Err(Error::Config(format!(
                                    "optimized plan '{}' needs fixed gamma_srs",
                                    plan.label
                                )));
                            }
                            plan.axes[0].grid.expand()?;
                        }
                    }
                }
            }
            Command::Sweep => {
                let plan = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [sweep] table".into()))?;
                if plan.kind != CurveKind::Grid {
                    return Err(Error::Config("sweep command only runs grid plans".into()));
                }
                plan.to_sweep_plan()?;
            }
            Command::Optimize => {
                let job = self
                    .optimize
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [optimize] table".into()))?;
                job.to_spec(self.seed.unwrap_or(1))?;
            }
            Command::Crossover => {
                let job = self
                    .crossover
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [crossover] table".into()))?;
                job.to_config(self.seed.unwrap_or(1))?;
            }
            Command::Accept => {
                // all fields optional with spec defaults
                let _ = self.accept.as_ref();
            }
        }
        Ok(())
    }
}

/// Shipped figure-reproduction presets.
pub const PRESET_NAMES: &[&str] = &["fig2a", "fig2b", "fig3", "fig4"];

pub fn preset(name: &str) -> Result<&'static str> {
    match name {
        "fig2a" => Ok(include_str!("../presets/fig2a.toml")),
        "fig2b" => Ok(include_str!("../presets/fig2b.toml")),
        "fig3" => Ok(include_str!("../presets/fig3.toml")),
        "fig4" => Ok(include_str!("../presets/fig4.toml")),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_curve_config() {
        let text = r#"
command = "curve"
seed = 7

[[plan]]
label = "tms"
family = "two-mode-squeezed"
observables = ["dn"]
[plan.fixed]
n_tot = 1.0
[[plan.axes]]
param = "gamma_srs"
grid = { log_start = 1e-4, log_stop = 1e-2, points = 5 }
"#;
        let cfg = JobConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.command, Command::Curve);
        assert_eq!(cfg.plans.len(), 1);
        let plan = cfg.plans[0].to_sweep_plan().unwrap();
        assert_eq!(plan.cell_count(), 5);
    }

    #[test]
    fn rejects_mismatched_tables() {
        let text = r#"
command = "curve"

[optimize]
family = "coherent-coherent"
n_tot = 1.0
gamma_srs = 2e-3
target = "qfi"
"#;
        assert!(JobConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = r#"
command = "curve"
bogus_field = 3

[[plan]]
label = "x"
family = "two-mode-squeezed"
observables = ["dn"]
"#;
        assert!(JobConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn round_trip_preserves_semantics() {
        let text = r#"
command = "optimize"
seed = 3

[optimize]
family = "coherent-squeezed-coherent"
n_tot = 2.0
gamma_srs = 0.002
target = { mom = "n_pr" }
starts = 4
"#;
        let cfg = JobConfig::from_toml_str(text).unwrap();
        let serialized = cfg.to_toml_string().unwrap();
        let reparsed = JobConfig::from_toml_str(&serialized).unwrap();
        assert_eq!(reparsed.command, cfg.command);
        assert_eq!(reparsed.seed, cfg.seed);
        let a = cfg.optimize.unwrap();
        let b = reparsed.optimize.unwrap();
        assert_eq!(a.n_tot, b.n_tot);
        assert_eq!(a.gamma_srs, b.gamma_srs);
        assert_eq!(a.target, b.target);
        assert_eq!(a.starts, b.starts);
    }

    #[test]
    fn grid_specs_expand() {
        let log = GridSpec::Log { log_start: 1e-3, log_stop: 1e-1, points: 3 };
        let vals = log.expand().unwrap();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 1e-3).abs() < 1e-15);
        assert!((vals[1] - 1e-2).abs() < 1e-12);
        assert!((vals[2] - 1e-1).abs() < 1e-12);
        let lin = GridSpec::Linear { start: 0.0, stop: 1.0, points: 5 };
        assert_eq!(lin.expand().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let bad = GridSpec::Log { log_start: 0.0, log_stop: 1.0, points: 3 };
        assert!(bad.expand().is_err());
    }

    #[test]
    fn all_presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let text = preset(name).unwrap();
            let cfg = JobConfig::from_toml_str(text)
                .unwrap_or_else(|e| panic!("preset {name} invalid: {e}"));
            assert!(cfg.seed.is_some(), "preset {name} must pin a seed");
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(preset("fig9").is_err());
    }
}
