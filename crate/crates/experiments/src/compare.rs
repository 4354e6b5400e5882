//! OPF, RAS-SCOPF and SCOPF side by side, with cascade replay of the
//! critical outages under each dispatch.

use rascopf::cascade::{run_cascade, CascadeOptions, CascadeResult};
use rascopf::formulations::{DispatchSolution, FormulationKind, RasScheme};
use rascopf::network::{Contingency, LineId, Network};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::critical::{critical_outages, find_critical_contingencies, CriticalRow};
use crate::error::ExperimentError;
use crate::solve_dispatch;

/// Order of the comparison rows.
pub const COMPARED: [FormulationKind; 3] =
    [FormulationKind::Opf, FormulationKind::RasScopf, FormulationKind::Scopf];

#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    pub outage: LineId,
    pub result: Result<CascadeResult, String>,
}

impl CascadeOutcome {
    pub fn failed(&self) -> bool {
        self.result.as_ref().map_or(false, |r| r.failed)
    }

    pub fn shed_mw(&self) -> f64 {
        self.result.as_ref().map_or(0.0, |r| r.total_load_shed_mw)
    }
}

#[derive(Debug, Clone)]
pub struct FormulationRow {
    pub kind: FormulationKind,
    pub solution: Result<DispatchSolution, String>,
    pub cascades: Vec<CascadeOutcome>,
}

impl FormulationRow {
    /// Pre-contingency generation cost, $.
    pub fn cost(&self) -> Option<f64> {
        self.solution.as_ref().ok().map(|s| s.generation_cost)
    }

    pub fn failures(&self) -> usize {
        self.cascades.iter().filter(|c| c.failed()).count()
    }

    pub fn total_shed_mw(&self) -> f64 {
        self.cascades.iter().map(|c| c.shed_mw()).fold(0.0, |a, b| a + b)
    }

    pub fn cascade_errors(&self) -> usize {
        self.cascades.iter().filter(|c| c.result.is_err()).count()
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Overload scan under the OPF dispatch; empty if OPF failed.
    pub critical: Vec<CriticalRow>,
    pub rows: Vec<FormulationRow>,
}

impl ComparisonReport {
    pub fn row(&self, kind: FormulationKind) -> Option<&FormulationRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// Cost increase over OPF in percent.
    pub fn increase_pct(&self, kind: FormulationKind) -> Option<f64> {
        let base = self.row(FormulationKind::Opf)?.cost()?;
        let c = self.row(kind)?.cost()?;
        Some((c - base) / base * 100.0)
    }
}

/// Runs a cascade for each single-line outage, in parallel; results keep
/// the order of `outages`.
pub fn replay_outages(
    net: &Network,
    gen_mw: &[f64],
    schemes: &[RasScheme],
    outages: &[LineId],
    opts: &CascadeOptions,
) -> Vec<CascadeOutcome> {
    outages
        .par_iter()
        .map(|&l| CascadeOutcome {
            outage: l,
            result: run_cascade(net, gen_mw, schemes, &Contingency::line(l), opts).map_err(|e| e.to_string()),
        })
        .collect()
}

/// Solves the three formulations and replays every critical outage under
/// each dispatch. A failed solve is recorded in its row and does not stop
/// the others.
pub fn compare_formulations(net: &Network, cfg: &ExperimentConfig) -> Result<ComparisonReport, ExperimentError> {
    let fcfg = cfg.formulation_config(net)?;
    let opts = cfg.cascade_options();
    let solved: Vec<(FormulationKind, Result<DispatchSolution, String>)> = COMPARED
        .iter()
        .map(|&k| (k, solve_dispatch(k, net, &fcfg, None, cfg).map_err(|e| e.to_string())))
        .collect();

    let critical = match &solved[0].1 {
        Ok(opf) => find_critical_contingencies(net, &opf.pre.gen_mw, cfg.cascade.overload_tol)?,
        Err(_) => Vec::new(),
    };
    let outages = critical_outages(&critical);

    let rows = solved
        .into_iter()
        .map(|(kind, solution)| {
            let cascades = match &solution {
                Ok(s) => {
                    let schemes: &[RasScheme] = if kind == FormulationKind::RasScopf { &s.schemes } else { &[] };
                    replay_outages(net, &s.pre.gen_mw, schemes, &outages, &opts)
                }
                Err(_) => Vec::new(),
            };
            FormulationRow { kind, solution, cascades }
        })
        .collect();
    Ok(ComparisonReport { critical, rows })
}
