//! Load-sensitivity study: RAS-aware SCOPF per random load scenario, then
//! cascade replay of the protected outages with the scheme fixed.

use miqp::SolveStatus;
use rascopf::cascade::{run_cascade, CascadeResult, CascadeStatus, EventKind};
use rascopf::formulations::{FormulationError, FormulationKind, RasScheme};
use rascopf::network::{LineId, Network};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::ExperimentError;
use crate::scenarios::{generate_scenarios, ScenarioSpec};
use crate::solve_dispatch;

/// Outage singled out for comparison in large-deviation runs.
pub const MARKED_OUTAGE: LineId = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureMode {
    /// A monitored line stayed overloaded after its scheme acted and tripped.
    MonitoredAfterRas,
    /// The cascade started on a line no scheme watches.
    Unmonitored,
    Other,
}

impl FailureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FailureMode::MonitoredAfterRas => "monitored-after-ras",
            FailureMode::Unmonitored => "unmonitored",
            FailureMode::Other => "other",
        }
    }
}

/// Looks at the first line trip of a trace: a monitored line tripping after
/// its scheme fired, or an unmonitored line tripping at all.
pub fn classify_failure(result: &CascadeResult, schemes: &[RasScheme]) -> FailureMode {
    let mut fired = vec![false; schemes.len()];
    for e in &result.events {
        match e.kind {
            EventKind::RasTriggered { scheme, .. } => {
                if let Some(f) = fired.get_mut(scheme) {
                    *f = true;
                }
            }
            EventKind::LineTrip { line, .. } => {
                return match schemes.iter().position(|s| s.monitored_lines.contains(&line)) {
                    Some(j) if fired[j] => FailureMode::MonitoredAfterRas,
                    Some(_) => FailureMode::Other,
                    None => FailureMode::Unmonitored,
                };
            }
            _ => {}
        }
    }
    FailureMode::Other
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCascade {
    pub outage: LineId,
    pub status: Option<CascadeStatus>,
    pub triggered: bool,
    pub failed: bool,
    pub shed_mw: f64,
    pub mode: Option<FailureMode>,
    pub marked: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioOutcome {
    /// The RAS-aware SCOPF has no feasible dispatch; no cascades are run.
    Discarded,
    Error(String),
    Solved { cost: f64, cascades: Vec<ScenarioCascade> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRow {
    pub index: usize,
    pub total_load_mw: f64,
    pub outcome: ScenarioOutcome,
}

impl ScenarioRow {
    pub fn feasible(&self) -> bool {
        matches!(self.outcome, ScenarioOutcome::Solved { .. })
    }

    pub fn cascades(&self) -> &[ScenarioCascade] {
        match &self.outcome {
            ScenarioOutcome::Solved { cascades, .. } => cascades,
            _ => &[],
        }
    }

    pub fn has_failure(&self) -> bool {
        self.cascades().iter().any(|c| c.failed)
    }

    pub fn shed_mw(&self) -> f64 {
        self.cascades().iter().map(|c| c.shed_mw).fold(0.0, |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityAggregate {
    pub scenarios: usize,
    pub feasible: usize,
    pub discarded: usize,
    pub errors: usize,
    pub failing_scenarios: usize,
    pub failed_cascades: usize,
    pub triggered_cascades: usize,
    pub total_shed_mw: f64,
    /// Largest shed of a single cascade.
    pub worst_shed_mw: f64,
}

impl SensitivityAggregate {
    pub fn from_rows(rows: &[ScenarioRow]) -> Self {
        let cascades = || rows.iter().flat_map(|r| r.cascades());
        Self {
            scenarios: rows.len(),
            feasible: rows.iter().filter(|r| r.feasible()).count(),
            discarded: rows
                .iter()
                .filter(|r| r.outcome == ScenarioOutcome::Discarded)
                .count(),
            errors: rows
                .iter()
                .filter(|r| matches!(r.outcome, ScenarioOutcome::Error(_)))
                .count(),
            failing_scenarios: rows.iter().filter(|r| r.has_failure()).count(),
            failed_cascades: cascades().filter(|c| c.failed).count(),
            triggered_cascades: cascades().filter(|c| c.triggered).count(),
            total_shed_mw: rows.iter().map(|r| r.shed_mw()).fold(0.0, |a, b| a + b),
            worst_shed_mw: cascades().map(|c| c.shed_mw).fold(0.0, f64::max),
        }
    }

    pub fn feasible_fraction(&self) -> f64 {
        ratio(self.feasible, self.scenarios)
    }

    /// Share of feasible scenarios with at least one failing cascade.
    pub fn failing_fraction(&self) -> f64 {
        ratio(self.failing_scenarios, self.feasible)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub spec: ScenarioSpec,
    pub rows: Vec<ScenarioRow>,
    pub aggregate: SensitivityAggregate,
}

/// Runs the study. Scenarios are evaluated in parallel and collected in
/// index order, so the report depends only on `(spec, scheme, cfg)`.
pub fn sensitivity_study(
    net: &Network,
    scheme: &RasScheme,
    spec: &ScenarioSpec,
    cfg: &ExperimentConfig,
) -> Result<SensitivityReport, ExperimentError> {
    let fcfg = cfg.formulation_config(net)?;
    let opts = cfg.cascade_options();
    let loads = generate_scenarios(net, spec)?;
    let schemes = std::slice::from_ref(scheme);

    let rows: Vec<ScenarioRow> = loads
        .par_iter()
        .enumerate()
        .map(|(index, load)| {
            let total_load_mw = load.iter().sum();
            let scen = match net.with_loads(load) {
                Ok(n) => n,
                Err(e) => {
                    return ScenarioRow {
                        index,
                        total_load_mw,
                        outcome: ScenarioOutcome::Error(e.to_string()),
                    }
                }
            };
            let outcome = match solve_dispatch(FormulationKind::RasAwareScopf, &scen, &fcfg, Some(scheme), cfg) {
                Err(FormulationError::NotOptimal {
                    status: SolveStatus::Infeasible,
                    ..
                }) => ScenarioOutcome::Discarded,
                Err(e) => ScenarioOutcome::Error(e.to_string()),
                Ok(sol) => {
                    let cascades = scheme
                        .protected
                        .iter()
                        .map(|k| {
                            let outage = *k.outaged_lines.first().expect("non-empty contingency");
                            let marked = k.outaged_lines.contains(&MARKED_OUTAGE);
                            match run_cascade(&scen, &sol.pre.gen_mw, schemes, k, &opts) {
                                Ok(r) => ScenarioCascade {
                                    outage,
                                    status: Some(r.status),
                                    triggered: r.ras_triggered(),
                                    failed: r.failed,
                                    shed_mw: r.total_load_shed_mw,
                                    mode: r.failed.then(|| classify_failure(&r, schemes)),
                                    marked,
                                    error: None,
                                },
                                Err(e) => ScenarioCascade {
                                    outage,
                                    status: None,
                                    triggered: false,
                                    failed: false,
                                    shed_mw: 0.0,
                                    mode: None,
                                    marked,
                                    error: Some(e.to_string()),
                                },
                            }
                        })
                        .collect();
                    ScenarioOutcome::Solved {
                        cost: sol.generation_cost,
                        cascades,
                    }
                }
            };
            ScenarioRow {
                index,
                total_load_mw,
                outcome,
            }
        })
        .collect();
    let aggregate = SensitivityAggregate::from_rows(&rows);
    Ok(SensitivityReport {
        spec: spec.clone(),
        rows,
        aggregate,
    })
}
