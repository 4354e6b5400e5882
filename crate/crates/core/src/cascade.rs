//! Cascading-failure simulation with DC flows, island redispatch, RAS
//! triggering and inverse-time line tripping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use miqp::{branch_and_bound, BranchOptions, LinExpr, Model, ModelError, Sense, SolveError, SolveStatus};
use thiserror::Error;

use crate::dcpf::{self, DcpfError, InjectionVector, OVERLOAD_TOL};
use crate::formulations::RasScheme;
use crate::network::{find_islands, BusId, Contingency, GenId, LineId, Network, NetworkError, Outage};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Dcpf(#[from] DcpfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("dispatch has {got} generator outputs for {expected} generators")]
    Dispatch { got: usize, expected: usize },
    #[error("scheme {0} has already been triggered")]
    AlreadyTriggered(usize),
}

/// Share of buses that must be cut off from the largest island for the
/// system to count as failed.
pub const FAILURE_FRACTION: f64 = 0.10;

/// Which load counts as shed once the system has failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailureShed {
    /// Load disconnected from the largest island is lost, on top of any
    /// load already shed by redispatch.
    #[default]
    OutsideLargestIsland,
    /// Every island is rebalanced in place; islands keep serving what their
    /// own generation can cover.
    AllIslandsRebalanced,
    /// Only load actually shed by redispatch before the failure.
    RedispatchOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOptions {
    /// Loop passes before giving up; `None` means twice the line count.
    pub max_steps: Option<usize>,
    pub overload_tol: f64,
    /// Droop big-M in p.u.
    pub big_m: f64,
    pub failure_shed: FailureShed,
    pub solver: BranchOptions,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            max_steps: None,
            overload_tol: OVERLOAD_TOL,
            big_m: 100.0,
            failure_shed: FailureShed::default(),
            solver: BranchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub line_in_service: Vec<bool>,
    pub gen_online: Vec<bool>,
    pub gen_mw: Vec<f64>,
    /// Load served per bus.
    pub load_mw: Vec<f64>,
    pub triggered: Vec<bool>,
}

impl SystemState {
    pub fn new(net: &Network, gen_mw: &[f64], n_schemes: usize) -> Result<Self, CascadeError> {
        if gen_mw.len() != net.generators.len() {
            return Err(CascadeError::Dispatch {
                got: gen_mw.len(),
                expected: net.generators.len(),
            });
        }
        let gen_online: Vec<bool> = net.generators.iter().map(|g| g.in_service).collect();
        Ok(Self {
            line_in_service: net.lines.iter().map(|l| l.in_service).collect(),
            gen_mw: gen_mw
                .iter()
                .zip(&gen_online)
                .map(|(&p, &on)| if on { p } else { 0.0 })
                .collect(),
            gen_online,
            load_mw: net.loads_mw(),
            triggered: vec![false; n_schemes],
        })
    }

    pub fn outage(&self) -> Outage {
        self.line_in_service
            .iter()
            .enumerate()
            .filter(|(_, &on)| !on)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn served_mw(&self) -> f64 {
        self.load_mw.iter().sum()
    }

    fn island_balance(&self, net: &Network, island: &BTreeSet<BusId>) -> f64 {
        let gen: f64 = net
            .generators
            .iter()
            .filter(|g| island.contains(&g.bus) && self.gen_online[g.id - 1])
            .map(|g| self.gen_mw[g.id - 1])
            .sum();
        let load: f64 = island.iter().map(|&b| self.load_mw[b - 1]).sum();
        gen - load
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    InitiatingOutage { line: LineId },
    IslandFormed { buses: Vec<BusId> },
    RasTriggered { scheme: usize, line: LineId },
    GeneratorTrip { generator: GenId, mw: f64 },
    LoadShed { bus: BusId, mw: f64 },
    Redispatch { island: BusId, mw: f64 },
    LineTrip { line: LineId, loading: f64 },
    SystemFailure { disconnected_buses: usize },
    Quiescent,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::InitiatingOutage { .. } => "initiating-outage",
            EventKind::IslandFormed { .. } => "island-formed",
            EventKind::RasTriggered { .. } => "ras-triggered",
            EventKind::GeneratorTrip { .. } => "generator-trip",
            EventKind::LoadShed { .. } => "load-shed",
            EventKind::Redispatch { .. } => "redispatch",
            EventKind::LineTrip { .. } => "line-trip",
            EventKind::SystemFailure { .. } => "system-failure",
            EventKind::Quiescent => "quiescent",
        }
    }

    fn element(&self) -> String {
        match self {
            EventKind::InitiatingOutage { line } | EventKind::LineTrip { line, .. } => line.to_string(),
            EventKind::IslandFormed { buses } => buses
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            EventKind::RasTriggered { scheme, .. } => (scheme + 1).to_string(),
            EventKind::GeneratorTrip { generator, .. } => generator.to_string(),
            EventKind::LoadShed { bus, .. } => bus.to_string(),
            EventKind::Redispatch { island, .. } => island.to_string(),
            EventKind::SystemFailure { disconnected_buses } => disconnected_buses.to_string(),
            EventKind::Quiescent => String::new(),
        }
    }

    /// MW amount carried by the event; loadings are reported in percent.
    fn amount(&self) -> f64 {
        match self {
            EventKind::GeneratorTrip { mw, .. }
            | EventKind::LoadShed { mw, .. }
            | EventKind::Redispatch { mw, .. } => *mw,
            EventKind::LineTrip { loading, .. } => loading * 100.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeEvent {
    /// Position in the trace, from 1.
    pub step: usize,
    /// Simulator loop pass the event belongs to; 0 for the initiating outage.
    pub pass: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeStatus {
    Quiescent,
    SystemFailure,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub initial: Contingency,
    pub events: Vec<CascadeEvent>,
    pub status: CascadeStatus,
    pub failed: bool,
    pub total_load_shed_mw: f64,
    pub islands: Vec<BTreeSet<BusId>>,
    pub final_state: SystemState,
}

impl CascadeResult {
    pub fn line_trips(&self) -> Vec<LineId> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::LineTrip { line, .. } => Some(line),
                _ => None,
            })
            .collect()
    }

    pub fn ras_triggered(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.kind, EventKind::RasTriggered { .. }))
    }

    /// `step,kind,element,mw` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,kind,element,mw\n");
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{:.4}", e.step, e.kind.name(), e.kind.element(), e.kind.amount());
        }
        s
    }

    /// One `key=value` line per event.
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let _ = writeln!(
                s,
                "step={} pass={} kind={} element={} mw={:.4}",
                e.step,
                e.pass,
                e.kind.name(),
                e.kind.element(),
                e.kind.amount()
            );
        }
        let _ = writeln!(
            s,
            "status={:?} failed={} shed_mw={:.4}",
            self.status, self.failed, self.total_load_shed_mw
        );
        s
    }
}

pub fn check_system_failure(net: &Network, islands: &[BTreeSet<BusId>]) -> bool {
    disconnected_buses(net, islands) as f64 >= FAILURE_FRACTION * net.buses.len() as f64
}

fn disconnected_buses(net: &Network, islands: &[BTreeSet<BusId>]) -> usize {
    let largest = islands.iter().map(BTreeSet::len).max().unwrap_or(0);
    net.buses.len() - largest
}

/// Index of the largest island; ties go to the one listed first.
fn largest_island(islands: &[BTreeSet<BusId>]) -> usize {
    let mut best = 0;
    for (i, isl) in islands.iter().enumerate() {
        if isl.len() > islands[best].len() {
            best = i;
        }
    }
    best
}

/// First overloaded monitored line when the scheme has not yet fired.
pub fn check_ras_trigger(
    state: &SystemState,
    flows: &BTreeMap<LineId, f64>,
    net: &Network,
    scheme_index: usize,
    scheme: &RasScheme,
    tol: f64,
) -> Option<LineId> {
    if state.triggered.get(scheme_index).copied().unwrap_or(true) {
        return None;
    }
    let monitored = flows
        .iter()
        .filter(|(l, _)| scheme.monitored_lines.contains(l))
        .map(|(&l, &f)| (l, f));
    dcpf::overloaded_in(monitored, net, tol).first().map(|r| r.0)
}

/// Trips the scheme's generators and marks it triggered.
pub fn apply_ras(
    state: &mut SystemState,
    scheme_index: usize,
    scheme: &RasScheme,
) -> Result<Vec<(GenId, f64)>, CascadeError> {
    if state.triggered[scheme_index] {
        return Err(CascadeError::AlreadyTriggered(scheme_index + 1));
    }
    state.triggered[scheme_index] = true;
    let mut tripped = Vec::new();
    for &g in &scheme.trip_set {
        if state.gen_online[g - 1] {
            tripped.push((g, state.gen_mw[g - 1]));
            state.gen_online[g - 1] = false;
            state.gen_mw[g - 1] = 0.0;
        }
    }
    Ok(tripped)
}

/// Changes made by one island redispatch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RedispatchOutcome {
    pub tripped: Vec<(GenId, f64)>,
    pub shed: Vec<(BusId, f64)>,
    /// Sum of absolute output changes of generators that stayed online.
    pub moved_mw: f64,
    /// The MILP was infeasible and the island was blacked out.
    pub fallback: bool,
}

/// Rebalances one island with the least load shed and fewest generator
/// trips; online units move along their droop line.
pub fn redispatch_island(
    net: &Network,
    state: &mut SystemState,
    island: &BTreeSet<BusId>,
    opts: &CascadeOptions,
) -> Result<RedispatchOutcome, CascadeError> {
    let base = net.base_mva;
    let gens: Vec<GenId> = net
        .generators
        .iter()
        .filter(|g| island.contains(&g.bus) && state.gen_online[g.id - 1])
        .map(|g| g.id)
        .collect();
    let buses: Vec<BusId> = island.iter().copied().filter(|&b| state.load_mw[b - 1] > 0.0).collect();
    if gens.is_empty() {
        return Ok(blackout(state, &gens, &buses, false));
    }

    let m_big = opts.big_m;
    let mut m = Model::new("redispatch");
    let t = m.free("droop")?;
    let mut balance = LinExpr::new();
    let mut p_vars = Vec::new();
    let mut z_vars = Vec::new();
    for &g in &gens {
        let gen = net.generator(g);
        let p0 = state.gen_mw[g - 1] / base;
        let hi = gen.p_max_mw / base;
        let p = m.continuous(format!("p_{g}"), 0.0, hi)?;
        let z = m.binary(format!("z_{g}"))?;
        m.add_linear_cost(z, -1.0);
        m.add_objective_constant(1.0);
        m.add_constraint(format!("pmax_{g}"), LinExpr::var(p).term(z, -hi), Sense::Le, 0.0)?;
        m.add_constraint(format!("pmin_{g}"), LinExpr::var(p).term(z, -gen.p_min_mw / base), Sense::Ge, 0.0)?;
        let dev = LinExpr::var(p).term(t, -gen.participation);
        m.add_constraint(format!("drphi_{g}"), dev.clone().term(z, m_big), Sense::Le, p0 + m_big)?;
        m.add_constraint(format!("drplo_{g}"), dev.term(z, -m_big), Sense::Ge, p0 - m_big)?;
        balance.add_term(p, 1.0);
        p_vars.push(p);
        z_vars.push(z);
    }
    let mut d_vars = Vec::new();
    for &b in &buses {
        let pd = state.load_mw[b - 1] / base;
        let d = m.continuous(format!("d_{b}"), 0.0, pd)?;
        m.add_linear_cost(d, -1.0);
        m.add_objective_constant(pd);
        balance.add_term(d, -1.0);
        d_vars.push(d);
    }
    m.add_constraint("balance", balance, Sense::Eq, 0.0)?;

    let sol = branch_and_bound(&m, &opts.solver)?;
    if sol.status != SolveStatus::Optimal {
        return Ok(blackout(state, &gens, &buses, true));
    }
    let x = &sol.values;
    let mut out = RedispatchOutcome::default();
    for (k, &g) in gens.iter().enumerate() {
        let old = state.gen_mw[g - 1];
        if x[z_vars[k].0] < 0.5 {
            out.tripped.push((g, old));
            state.gen_online[g - 1] = false;
            state.gen_mw[g - 1] = 0.0;
        } else {
            let new = x[p_vars[k].0] * base;
            out.moved_mw += (new - old).abs();
            state.gen_mw[g - 1] = new;
        }
    }
    for (k, &b) in buses.iter().enumerate() {
        let old = state.load_mw[b - 1];
        let new = (x[d_vars[k].0] * base).clamp(0.0, old);
        if old - new > 1e-9 {
            out.shed.push((b, old - new));
        }
        state.load_mw[b - 1] = new;
    }
    // roundoff goes to the first online unit so the island balances exactly
    let residual = state.island_balance(net, island);
    if let Some(&g) = gens.iter().find(|&&g| state.gen_online[g - 1]) {
        state.gen_mw[g - 1] -= residual;
    }
    Ok(out)
}

fn blackout(state: &mut SystemState, gens: &[GenId], buses: &[BusId], fallback: bool) -> RedispatchOutcome {
    let mut out = RedispatchOutcome {
        fallback,
        ..Default::default()
    };
    for &g in gens {
        out.tripped.push((g, state.gen_mw[g - 1]));
        state.gen_online[g - 1] = false;
        state.gen_mw[g - 1] = 0.0;
    }
    for &b in buses {
        out.shed.push((b, state.load_mw[b - 1]));
        state.load_mw[b - 1] = 0.0;
    }
    out
}

/// Most overloaded line that may trip: monitored lines of schemes that have
/// not fired are held back.
pub fn select_trip(
    flows: &BTreeMap<LineId, f64>,
    net: &Network,
    schemes: &[RasScheme],
    state: &SystemState,
    tol: f64,
) -> Option<(LineId, f64)> {
    let held: BTreeSet<LineId> = schemes
        .iter()
        .enumerate()
        .filter(|(j, _)| !state.triggered[*j])
        .flat_map(|(_, s)| s.monitored_lines.iter().copied())
        .collect();
    dcpf::overloaded_in(flows.iter().map(|(&l, &f)| (l, f)), net, tol)
        .into_iter()
        .find(|(l, _)| !held.contains(l))
}

fn solve_flows(net: &Network, state: &SystemState, islands: &[BTreeSet<BusId>]) -> Result<BTreeMap<LineId, f64>, CascadeError> {
    let out = state.outage();
    let gen: Vec<f64> = state
        .gen_mw
        .iter()
        .zip(&state.gen_online)
        .map(|(&p, &on)| if on { p } else { 0.0 })
        .collect();
    let inj = InjectionVector::from_dispatch(net, &gen, &state.load_mw);
    let mut flows = BTreeMap::new();
    for island in islands {
        flows.extend(dcpf::solve_island(net, &out, island, &inj)?.flows);
    }
    Ok(flows)
}

struct Recorder {
    events: Vec<CascadeEvent>,
    pass: usize,
}

impl Recorder {
    fn push(&mut self, kind: EventKind) {
        self.events.push(CascadeEvent {
            step: self.events.len() + 1,
            pass: self.pass,
            kind,
        });
    }

    fn redispatch(&mut self, island: BusId, r: RedispatchOutcome) {
        for (g, mw) in r.tripped {
            self.push(EventKind::GeneratorTrip { generator: g, mw });
        }
        for (b, mw) in r.shed {
            self.push(EventKind::LoadShed { bus: b, mw });
        }
        if r.moved_mw > 0.0 {
            self.push(EventKind::Redispatch { island, mw: r.moved_mw });
        }
    }
}

fn balance_islands(
    net: &Network,
    state: &mut SystemState,
    islands: &[BTreeSet<BusId>],
    opts: &CascadeOptions,
    rec: &mut Recorder,
) -> Result<(), CascadeError> {
    for island in islands {
        if state.island_balance(net, island).abs() > dcpf::BALANCE_TOL_MW {
            let r = redispatch_island(net, state, island, opts)?;
            rec.redispatch(island.first().copied().unwrap_or(0), r);
        }
    }
    Ok(())
}

/// Runs one cascade from `init` starting at the dispatch `gen_mw`.
pub fn run_cascade(
    net: &Network,
    gen_mw: &[f64],
    schemes: &[RasScheme],
    init: &Contingency,
    opts: &CascadeOptions,
) -> Result<CascadeResult, CascadeError> {
    init.validate(net)?;
    let mut state = SystemState::new(net, gen_mw, schemes.len())?;
    let initial_load = net.total_load_mw();
    let max_steps = opts.max_steps.unwrap_or(2 * net.lines.len());
    let mut rec = Recorder {
        events: Vec::new(),
        pass: 0,
    };
    for &l in &init.outaged_lines {
        state.line_in_service[l - 1] = false;
        rec.push(EventKind::InitiatingOutage { line: l });
    }

    let mut known = find_islands(net, &Outage::new());
    let status = loop {
        rec.pass += 1;
        if rec.pass > max_steps {
            break CascadeStatus::MaxSteps;
        }
        let islands = find_islands(net, &state.outage());
        if islands.len() > known.len() {
            let main = largest_island(&islands);
            for (i, isl) in islands.iter().enumerate() {
                if i != main && !known.contains(isl) {
                    rec.push(EventKind::IslandFormed {
                        buses: isl.iter().copied().collect(),
                    });
                }
            }
            known = islands.clone();
        }
        if check_system_failure(net, &islands) {
            let disconnected = disconnected_buses(net, &islands);
            if opts.failure_shed == FailureShed::OutsideLargestIsland {
                let main = largest_island(&islands);
                for (i, isl) in islands.iter().enumerate() {
                    if i == main {
                        continue;
                    }
                    for &b in isl {
                        let mw = state.load_mw[b - 1];
                        if mw > 0.0 {
                            state.load_mw[b - 1] = 0.0;
                            rec.push(EventKind::LoadShed { bus: b, mw });
                        }
                    }
                    for g in net.generators.iter().filter(|g| isl.contains(&g.bus)) {
                        state.gen_online[g.id - 1] = false;
                        state.gen_mw[g.id - 1] = 0.0;
                    }
                }
            }
            if opts.failure_shed == FailureShed::AllIslandsRebalanced {
                balance_islands(net, &mut state, &islands, opts, &mut rec)?;
            }
            rec.push(EventKind::SystemFailure {
                disconnected_buses: disconnected,
            });
            break CascadeStatus::SystemFailure;
        }

        balance_islands(net, &mut state, &islands, opts, &mut rec)?;
        let mut flows = solve_flows(net, &state, &islands)?;

        let mut fired = false;
        for (j, scheme) in schemes.iter().enumerate() {
            if let Some(line) = check_ras_trigger(&state, &flows, net, j, scheme, opts.overload_tol) {
                rec.push(EventKind::RasTriggered { scheme: j, line });
                for (g, mw) in apply_ras(&mut state, j, scheme)? {
                    rec.push(EventKind::GeneratorTrip { generator: g, mw });
                }
                fired = true;
            }
        }
        if fired {
            balance_islands(net, &mut state, &islands, opts, &mut rec)?;
            flows = solve_flows(net, &state, &islands)?;
        }

        match select_trip(&flows, net, schemes, &state, opts.overload_tol) {
            Some((line, loading)) => {
                state.line_in_service[line - 1] = false;
                rec.push(EventKind::LineTrip { line, loading });
            }
            None => {
                rec.push(EventKind::Quiescent);
                break CascadeStatus::Quiescent;
            }
        }
    };

    let islands = find_islands(net, &state.outage());
    let served = state.served_mw();
    Ok(CascadeResult {
        initial: init.clone(),
        events: rec.events,
        failed: status == CascadeStatus::SystemFailure,
        status,
        total_load_shed_mw: (initial_load - served).max(0.0),
        islands,
        final_state: state,
    })
}
