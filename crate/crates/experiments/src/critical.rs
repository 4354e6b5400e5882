//! Post-contingency overload scan.

use rascopf::dcpf::{self, InjectionVector};
use rascopf::formulations::non_radial_outages;
use rascopf::network::{find_islands, LineId, Network};

use crate::error::ExperimentError;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRow {
    pub outage: LineId,
    pub overloaded: LineId,
    /// Flow over rating, in percent.
    pub loading_pct: f64,
}

/// Lists every overload caused by a single non-radial line outage under the
/// given dispatch. Line outages move no generation, so the intermediate
/// flows are the plain DC flows on the reduced network. Outages that split
/// the network are skipped, since they need redispatch to be evaluated.
pub fn find_critical_contingencies(
    net: &Network,
    gen_mw: &[f64],
    tol: f64,
) -> Result<Vec<CriticalRow>, ExperimentError> {
    let inj = InjectionVector::from_dispatch(net, gen_mw, &net.loads_mw());
    let mut rows = Vec::new();
    for k in non_radial_outages(net) {
        let islands = find_islands(net, &k.outaged_lines);
        if islands.len() > 1 {
            continue;
        }
        let sol = dcpf::solve_island(net, &k.outaged_lines, &islands[0], &inj)?;
        let mut over = dcpf::overloaded_lines(&sol, net, tol);
        over.sort_by_key(|&(l, _)| l);
        let outage = *k.outaged_lines.first().expect("single outage");
        rows.extend(over.into_iter().map(|(l, loading)| CriticalRow {
            outage,
            overloaded: l,
            loading_pct: loading * 100.0,
        }));
    }
    Ok(rows)
}

/// Distinct outaged lines in scan order.
pub fn critical_outages(rows: &[CriticalRow]) -> Vec<LineId> {
    let mut out: Vec<LineId> = Vec::new();
    for r in rows {
        if !out.contains(&r.outage) {
            out.push(r.outage);
        }
    }
    out
}
