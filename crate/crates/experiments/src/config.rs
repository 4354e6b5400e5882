//! TOML experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use miqp::BranchOptions;
use rascopf::cascade::{CascadeOptions, FailureShed};
use rascopf::formulations::{
    non_radial_outages, FormulationConfig, NetworkEncoding, RasScheme, SchemeDesign,
};
use rascopf::network::{Contingency, GenId, LineId, Network};
use serde::Deserialize;

use crate::error::ExperimentError;
use crate::scenarios::ScenarioSpec;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_case")]
    pub case: PathBuf,
    /// Apply the case-study derating when the case is not already prepared.
    #[serde(default = "yes")]
    pub prepare: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub formulation: FormulationSection,
    #[serde(default = "default_schemes")]
    pub scheme: Vec<SchemeSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub cascade: CascadeSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulationSection {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_big_m")]
    pub big_m: f64,
    /// Single-line outages; empty means every non-radial line.
    #[serde(default)]
    pub contingencies: Vec<LineId>,
    #[serde(default = "default_balancing")]
    pub balancing: Vec<GenId>,
    #[serde(default)]
    pub forbid_balancing_trips: bool,
    #[serde(default)]
    pub encoding: Encoding,
    #[serde(default = "yes")]
    pub tighten: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Angles,
    #[default]
    ShiftFactors,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub monitored: Vec<LineId>,
    pub protected: Vec<LineId>,
    /// Fixed trip set; when absent the scheme is designed by RAS-SCOPF.
    #[serde(default)]
    pub trip: Option<Vec<GenId>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_gap")]
    pub relative_gap: f64,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    /// Seconds per solve.
    #[serde(default)]
    pub time_limit: Option<f64>,
    /// Secant pieces per quadratic cost; 0 keeps the quadratic objective.
    #[serde(default)]
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_overload_tol")]
    pub overload_tol: f64,
    #[serde(default)]
    pub failure_shed: FailureShedMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureShedMode {
    #[default]
    OutsideLargestIsland,
    AllIslandsRebalanced,
    RedispatchOnly,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_total")]
    pub total_load_mw: f64,
}

fn yes() -> bool {
    true
}
fn default_case() -> PathBuf {
    PathBuf::from("data/rts96.case")
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_gamma() -> f64 {
    5000.0
}
fn default_rho() -> f64 {
    1000.0
}
fn default_big_m() -> f64 {
    100.0
}
fn default_balancing() -> Vec<GenId> {
    (1..=16).collect()
}
fn default_schemes() -> Vec<SchemeSection> {
    vec![SchemeSection {
        monitored: vec![23],
        protected: vec![7, 18, 21, 22, 27, 29],
        trip: None,
    }]
}
fn default_gap() -> f64 {
    1e-6
}
fn default_node_limit() -> usize {
    200_000
}
fn default_overload_tol() -> f64 {
    rascopf::dcpf::OVERLOAD_TOL
}
fn default_lo() -> f64 {
    0.9
}
fn default_hi() -> f64 {
    1.1
}
fn default_count() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_total() -> f64 {
    2850.0
}

impl Default for FormulationSection {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            rho: default_rho(),
            big_m: default_big_m(),
            contingencies: Vec::new(),
            balancing: default_balancing(),
            forbid_balancing_trips: false,
            encoding: Encoding::default(),
            tighten: true,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            relative_gap: default_gap(),
            node_limit: default_node_limit(),
            time_limit: None,
            segments: 0,
        }
    }
}

impl Default for CascadeSection {
    fn default() -> Self {
        Self {
            max_steps: None,
            overload_tol: default_overload_tol(),
            failure_shed: FailureShedMode::default(),
        }
    }
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            lo: default_lo(),
            hi: default_hi(),
            count: default_count(),
            seed: default_seed(),
            total_load_mw: default_total(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: default_case(),
            prepare: true,
            output_dir: default_output(),
            formulation: FormulationSection::default(),
            scheme: default_schemes(),
            solver: SolverSection::default(),
            cascade: CascadeSection::default(),
            sensitivity: SensitivitySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let s = &self.solver;
        if !(s.relative_gap >= 0.0) {
            return bad(format!("solver.relative_gap must be non-negative, got {}", s.relative_gap));
        }
        if let Some(t) = s.time_limit {
            if !(t > 0.0) {
                return bad(format!("solver.time_limit must be positive, got {t}"));
            }
        }
        if !(self.cascade.overload_tol >= 0.0) {
            return bad("cascade.overload_tol must be non-negative".into());
        }
        for (j, sc) in self.scheme.iter().enumerate() {
            if sc.monitored.is_empty() {
                return bad(format!("scheme {} monitors no lines", j + 1));
            }
        }
        self.sensitivity_spec()
            .validate()
            .map_err(|e| ExperimentError::Config(format!("[sensitivity] {e}")))
    }

    pub fn formulation_config(&self, net: &Network) -> Result<FormulationConfig, ExperimentError> {
        let f = &self.formulation;
        let contingencies = if f.contingencies.is_empty() {
            non_radial_outages(net)
        } else {
            f.contingencies.iter().map(|&l| Contingency::line(l)).collect()
        };
        let cfg = FormulationConfig {
            gamma: f.gamma,
            rho: f.rho,
            big_m: f.big_m,
            contingencies,
            schemes: self
                .scheme
                .iter()
                .map(|s| SchemeDesign {
                    monitored_lines: s.monitored.iter().copied().collect(),
                    protected: s.protected.iter().map(|&l| Contingency::line(l)).collect(),
                })
                .collect(),
            balancing: f.balancing.clone(),
            forbid_balancing_trips: f.forbid_balancing_trips,
            encoding: match f.encoding {
                Encoding::Angles => NetworkEncoding::Angles,
                Encoding::ShiftFactors => NetworkEncoding::ShiftFactors,
            },
            tighten: f.tighten,
        };
        cfg.validate(net)?;
        Ok(cfg)
    }

    /// Schemes whose trip sets are pinned in the file; `None` if any scheme
    /// still has to be designed.
    pub fn fixed_schemes(&self) -> Option<Vec<RasScheme>> {
        self.scheme
            .iter()
            .map(|s| {
                s.trip.as_ref().map(|trip| RasScheme {
                    monitored_lines: s.monitored.iter().copied().collect(),
                    protected: s.protected.iter().map(|&l| Contingency::line(l)).collect(),
                    trip_set: trip.iter().copied().collect::<BTreeSet<_>>(),
                    triggered: false,
                })
            })
            .collect()
    }

    pub fn branch_options(&self) -> BranchOptions {
        BranchOptions {
            relative_gap: self.solver.relative_gap,
            node_limit: self.solver.node_limit,
            time_limit: self.solver.time_limit.unwrap_or(f64::INFINITY),
            ..BranchOptions::default()
        }
    }

    pub fn cascade_options(&self) -> CascadeOptions {
        CascadeOptions {
            max_steps: self.cascade.max_steps,
            overload_tol: self.cascade.overload_tol,
            big_m: self.formulation.big_m,
            failure_shed: match self.cascade.failure_shed {
                FailureShedMode::OutsideLargestIsland => FailureShed::OutsideLargestIsland,
                FailureShedMode::AllIslandsRebalanced => FailureShed::AllIslandsRebalanced,
                FailureShedMode::RedispatchOnly => FailureShed::RedispatchOnly,
            },
            solver: self.branch_options(),
        }
    }

    pub fn sensitivity_spec(&self) -> ScenarioSpec {
        let s = &self.sensitivity;
        ScenarioSpec {
            lo: s.lo,
            hi: s.hi,
            count: s.count,
            seed: s.seed,
            total_load_mw: s.total_load_mw,
        }
    }
}
