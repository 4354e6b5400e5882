//! Case-study harness: contingency scan, formulation comparison with
//! cascade replay, load-sensitivity study, CSV reports and the `rascopf`
//! command line.

pub mod cli;
pub mod compare;
pub mod config;
pub mod critical;
pub mod error;
pub mod report;
pub mod scenarios;
pub mod sensitivity;

use std::path::Path;

use rascopf::formulations::{
    self, DispatchSolution, FormulationConfig, FormulationError, FormulationKind, RasScheme,
};
use rascopf::network::{parse_case, prepare_study_case, Network};

pub use compare::{compare_formulations, CascadeOutcome, ComparisonReport, FormulationRow};
pub use config::ExperimentConfig;
pub use critical::{critical_outages, find_critical_contingencies, CriticalRow};
pub use error::ExperimentError;
pub use scenarios::{generate_scenarios, ScenarioSpec};
pub use sensitivity::{
    classify_failure, sensitivity_study, FailureMode, ScenarioCascade, ScenarioOutcome, ScenarioRow,
    SensitivityAggregate, SensitivityReport,
};

/// Reads a case and applies the case-study preparation unless the file is
/// already prepared or `prepare` is off.
pub fn load_case(path: impl AsRef<Path>, prepare: bool) -> Result<Network, ExperimentError> {
    let net = parse_case(path)?;
    if prepare && !net.prepared {
        Ok(prepare_study_case(&net)?)
    } else {
        Ok(net)
    }
}

/// Solves one formulation with the configured solver settings, using the
/// piecewise-linear objective when `solver.segments > 0`.
pub fn solve_dispatch(
    kind: FormulationKind,
    net: &Network,
    fcfg: &FormulationConfig,
    scheme: Option<&RasScheme>,
    cfg: &ExperimentConfig,
) -> Result<DispatchSolution, FormulationError> {
    let opts = cfg.branch_options();
    match cfg.solver.segments {
        0 => formulations::solve(kind, net, fcfg, scheme, &opts),
        n => formulations::solve_linearized(kind, net, fcfg, scheme, &opts, n),
    }
}

/// Designed schemes: the pinned trip sets from the config if every scheme
/// has one, otherwise a RAS-SCOPF solve.
pub fn design_schemes(
    net: &Network,
    fcfg: &FormulationConfig,
    cfg: &ExperimentConfig,
) -> Result<Vec<RasScheme>, ExperimentError> {
    if let Some(s) = cfg.fixed_schemes() {
        return Ok(s);
    }
    Ok(solve_dispatch(FormulationKind::RasScopf, net, fcfg, None, cfg)?.schemes)
}
