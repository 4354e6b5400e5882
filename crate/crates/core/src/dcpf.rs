//! DC power flow on a single island and overload screening.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::{BusId, LineId, Network, Outage};

/// Default relative exceedance before a line counts as overloaded.
pub const OVERLOAD_TOL: f64 = 1e-6;
/// Allowed island imbalance in MW.
pub const BALANCE_TOL_MW: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcpfError {
    #[error("island {island:?} is out of balance by {mismatch_mw} MW")]
    Imbalance { island: Vec<BusId>, mismatch_mw: f64 },
    #[error("susceptance system of the island at bus {reference} is singular")]
    Singular { reference: BusId },
    #[error("injection vector has {got} entries for {expected} buses")]
    Dimension { got: usize, expected: usize },
}

/// Net injection per bus in MW (generation minus load served), indexed by
/// bus id - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector(pub Vec<f64>);

impl InjectionVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Builds injections from generator outputs (by generator id - 1) and
    /// per-bus loads.
    pub fn from_dispatch(net: &Network, gen_mw: &[f64], load_mw: &[f64]) -> Self {
        let mut inj: Vec<f64> = load_mw.iter().map(|l| -l).collect();
        for (g, &p) in net.generators.iter().zip(gen_mw) {
            inj[g.bus - 1] += p;
        }
        Self(inj)
    }

    pub fn island_sum(&self, island: &BTreeSet<BusId>) -> f64 {
        island.iter().map(|&b| self.0[b - 1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Smallest bus id of the island.
    pub island: BusId,
    pub reference_bus: BusId,
    /// Radians, per bus of the island.
    pub angles: BTreeMap<BusId, f64>,
    /// MW from `from_bus` to `to_bus`, per surviving line inside the island.
    pub flows: BTreeMap<LineId, f64>,
}

/// Reference bus rule: lowest-id bus hosting an in-service generator, else
/// the lowest-id bus.
pub fn reference_bus(net: &Network, island: &BTreeSet<BusId>) -> BusId {
    island
        .iter()
        .copied()
        .find(|&b| net.generators_at(b).any(|g| g.in_service))
        .or_else(|| island.first().copied())
        .expect("islands are non-empty")
}

pub fn solve_island(
    net: &Network,
    out: &Outage,
    island: &BTreeSet<BusId>,
    inj: &InjectionVector,
) -> Result<FlowSolution, DcpfError> {
    if inj.0.len() != net.buses.len() {
        return Err(DcpfError::Dimension {
            got: inj.0.len(),
            expected: net.buses.len(),
        });
    }
    let mismatch = inj.island_sum(island);
    if mismatch.abs() > BALANCE_TOL_MW {
        return Err(DcpfError::Imbalance {
            island: island.iter().copied().collect(),
            mismatch_mw: mismatch,
        });
    }
    let reference = reference_bus(net, island);
    let island_lines: Vec<_> = net
        .surviving_lines(out)
        .filter(|l| island.contains(&l.from_bus) && island.contains(&l.to_bus))
        .collect();

    // reduced system over the non-reference buses of the island
    let others: Vec<BusId> = island.iter().copied().filter(|&b| b != reference).collect();
    let pos: BTreeMap<BusId, usize> = others.iter().enumerate().map(|(k, &b)| (b, k)).collect();
    let n = others.len();
    let mut b_mat = DMatrix::<f64>::zeros(n, n);
    for l in &island_lines {
        let y = -l.susceptance_pu;
        let (i, j) = (pos.get(&l.from_bus), pos.get(&l.to_bus));
        if let Some(&i) = i {
            b_mat[(i, i)] += y;
        }
        if let Some(&j) = j {
            b_mat[(j, j)] += y;
        }
        if let (Some(&i), Some(&j)) = (i, j) {
            b_mat[(i, j)] -= y;
            b_mat[(j, i)] -= y;
        }
    }
    let p = DVector::from_iterator(n, others.iter().map(|&b| inj.0[b - 1] / net.base_mva));
    let theta = if n == 0 {
        DVector::zeros(0)
    } else {
        b_mat
            .lu()
            .solve(&p)
            .ok_or(DcpfError::Singular { reference })?
    };
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(DcpfError::Singular { reference });
    }

    let mut angles = BTreeMap::new();
    angles.insert(reference, 0.0);
    for (k, &b) in others.iter().enumerate() {
        angles.insert(b, theta[k]);
    }
    let flows = island_lines
        .iter()
        .map(|l| {
            let f = -l.susceptance_pu * (angles[&l.from_bus] - angles[&l.to_bus]);
            (l.id, f * net.base_mva)
        })
        .collect();
    Ok(FlowSolution {
        island: *island.first().expect("islands are non-empty"),
        reference_bus: reference,
        angles,
        flows,
    })
}

/// Flow sensitivities of one island: the flow on each line is
/// `sum(factor * injection)` over the island's non-reference buses.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFactors {
    pub reference_bus: BusId,
    pub rows: BTreeMap<LineId, Vec<(BusId, f64)>>,
}

pub fn shift_factors(
    net: &Network,
    out: &Outage,
    island: &BTreeSet<BusId>,
) -> Result<ShiftFactors, DcpfError> {
    let reference = reference_bus(net, island);
    let others: Vec<BusId> = island.iter().copied().filter(|&b| b != reference).collect();
    let pos: BTreeMap<BusId, usize> = others.iter().enumerate().map(|(k, &b)| (b, k)).collect();
    let n = others.len();
    let lines: Vec<_> = net
        .surviving_lines(out)
        .filter(|l| island.contains(&l.from_bus) && island.contains(&l.to_bus))
        .collect();
    let mut b_mat = DMatrix::<f64>::zeros(n, n);
    for l in &lines {
        let y = -l.susceptance_pu;
        let (i, j) = (pos.get(&l.from_bus), pos.get(&l.to_bus));
        if let Some(&i) = i {
            b_mat[(i, i)] += y;
        }
        if let Some(&j) = j {
            b_mat[(j, j)] += y;
        }
        if let (Some(&i), Some(&j)) = (i, j) {
            b_mat[(i, j)] -= y;
            b_mat[(j, i)] -= y;
        }
    }
    let x = if n == 0 {
        DMatrix::zeros(0, 0)
    } else {
        b_mat.try_inverse().ok_or(DcpfError::Singular { reference })?
    };
    let row_of = |b: BusId| pos.get(&b).copied();
    let mut rows = BTreeMap::new();
    for l in &lines {
        let y = -l.susceptance_pu;
        let mut row = Vec::with_capacity(n);
        for (k, &b) in others.iter().enumerate() {
            let xf = row_of(l.from_bus).map_or(0.0, |i| x[(i, k)]);
            let xt = row_of(l.to_bus).map_or(0.0, |j| x[(j, k)]);
            let v = y * (xf - xt);
            if v.abs() > 1e-12 {
                row.push((b, v));
            }
        }
        rows.insert(l.id, row);
    }
    Ok(ShiftFactors {
        reference_bus: reference,
        rows,
    })
}

/// `|flow| / rating` for a line.
pub fn loading(net: &Network, line: LineId, flow_mw: f64) -> f64 {
    flow_mw.abs() / net.line(line).rating_mw
}

/// Lines with `|flow| > rating * (1 + tol)`, heaviest first, ties by line id.
pub fn overloaded_lines(sol: &FlowSolution, net: &Network, tol: f64) -> Vec<(LineId, f64)> {
    overloaded_in(sol.flows.iter().map(|(&l, &f)| (l, f)), net, tol)
}

pub fn overloaded_in(
    flows: impl IntoIterator<Item = (LineId, f64)>,
    net: &Network,
    tol: f64,
) -> Vec<(LineId, f64)> {
    let mut over: Vec<(LineId, f64)> = flows
        .into_iter()
        .filter(|&(l, f)| f.abs() > net.line(l).rating_mw * (1.0 + tol))
        .map(|(l, f)| (l, loading(net, l, f)))
        .collect();
    sort_by_loading(&mut over);
    over
}

/// Descending loading with loadings compared on a 1e-9 grid, so parallel
/// circuits that differ only by roundoff tie and fall back to line id.
pub fn sort_by_loading(rows: &mut [(LineId, f64)]) {
    let key = |x: f64| (x * 1e9).round() as i64;
    rows.sort_by(|a, b| key(b.1).cmp(&key(a.1)).then(a.0.cmp(&b.0)));
}
