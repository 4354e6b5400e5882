//! Model builders for OPF, SCOPF, RAS-SCOPF and RAS-aware SCOPF, and typed
//! extraction of their solutions.
//!
//! Everything inside a model is in per unit; extracted solutions are in MW.

use std::collections::{BTreeMap, BTreeSet};

use miqp::{
    branch_and_bound, linearize_objective, BranchOptions, LinExpr, MipSolution, Model, ModelError, Sense, SolveError,
    SolveStatus, VarId,
};
use thiserror::Error;

use crate::dcpf::{self, DcpfError, InjectionVector};
use crate::network::{
    find_islands, participation_factors, BusId, Contingency, GenId, LineId, Network,
    NetworkError, Outage,
};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Dcpf(#[from] DcpfError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{kind} solve ended with status {status:?}")]
    NotOptimal { kind: FormulationKind, status: SolveStatus },
    #[error("{stage}: line {line} flow differs from a DC re-solve by {deviation_pu:.3e} p.u.")]
    Inconsistent {
        stage: String,
        line: LineId,
        deviation_pu: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormulationKind {
    Opf,
    Scopf,
    RasScopf,
    RasAwareScopf,
}

impl std::fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FormulationKind::Opf => "OPF",
            FormulationKind::Scopf => "SCOPF",
            FormulationKind::RasScopf => "RAS-SCOPF",
            FormulationKind::RasAwareScopf => "RAS-aware SCOPF",
        })
    }
}

/// How DC network physics enters a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NetworkEncoding {
    /// Angle variables per bus, nodal balance rows, flows as angle differences.
    Angles,
    /// Flows as shift-factor combinations of injections, one balance row per
    /// island. Same feasible set, far fewer rows.
    #[default]
    ShiftFactors,
}

/// Monitored lines and protected contingencies of one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeDesign {
    pub monitored_lines: BTreeSet<LineId>,
    pub protected: Vec<Contingency>,
}

/// A designed scheme: what it watches, what it protects and what it trips.
#[derive(Debug, Clone, PartialEq)]
pub struct RasScheme {
    pub monitored_lines: BTreeSet<LineId>,
    pub protected: Vec<Contingency>,
    pub trip_set: BTreeSet<GenId>,
    pub triggered: bool,
}

impl RasScheme {
    pub fn design(&self) -> SchemeDesign {
        SchemeDesign {
            monitored_lines: self.monitored_lines.clone(),
            protected: self.protected.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulationConfig {
    /// Load-shed penalty, $/MW.
    pub gamma: f64,
    /// Penalty per tripped generator, $.
    pub rho: f64,
    /// Big-M constant in p.u.; the lower constant is `-big_m`.
    pub big_m: f64,
    pub contingencies: Vec<Contingency>,
    pub schemes: Vec<SchemeDesign>,
    /// Generators sharing imbalances; empty keeps the network's factors.
    pub balancing: Vec<GenId>,
    pub forbid_balancing_trips: bool,
    pub encoding: NetworkEncoding,
    /// Replace `big_m` by smaller constants that are provably non-binding,
    /// bound the droop scalars, and add implied trip-linking rows. The
    /// integer-feasible set is unchanged; relaxations get much tighter.
    pub tighten: bool,
}

impl FormulationConfig {
    /// Case-study settings: every non-radial single line outage, one scheme
    /// watching line 23 and protecting outages 7, 18, 21, 22, 27 and 29.
    pub fn case_study(net: &Network) -> Self {
        Self {
            gamma: 5000.0,
            rho: 1000.0,
            big_m: 100.0,
            contingencies: non_radial_outages(net),
            schemes: vec![SchemeDesign {
                monitored_lines: BTreeSet::from([23]),
                protected: [7, 18, 21, 22, 27, 29].map(Contingency::line).to_vec(),
            }],
            balancing: (1..=16).collect(),
            forbid_balancing_trips: false,
            encoding: NetworkEncoding::default(),
            tighten: true,
        }
    }

    pub fn validate(&self, net: &Network) -> Result<(), FormulationError> {
        let bad = |m: String| Err(FormulationError::Config(m));
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.rho >= 0.0) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if !(self.big_m > 0.0) {
            return bad(format!("big_m must be positive, got {}", self.big_m));
        }
        for c in &self.contingencies {
            c.validate(net)?;
        }
        let all: BTreeSet<&Contingency> = self.contingencies.iter().collect();
        let mut seen = BTreeSet::new();
        for (j, s) in self.schemes.iter().enumerate() {
            if s.monitored_lines.is_empty() {
                return bad(format!("scheme {} monitors no lines", j + 1));
            }
            if let Some(l) = s.monitored_lines.iter().find(|&&l| l == 0 || l > net.lines.len()) {
                return bad(format!("scheme {} monitors unknown line {l}", j + 1));
            }
            for k in &s.protected {
                if !all.contains(k) {
                    return bad(format!("protected contingency {k} is not in the contingency set"));
                }
                if !seen.insert(k) {
                    return bad(format!("contingency {k} is protected by more than one scheme"));
                }
            }
        }
        Ok(())
    }

    fn scheme_of(&self, k: &Contingency) -> Option<usize> {
        self.schemes.iter().position(|s| s.protected.contains(k))
    }

    fn protected(&self) -> BTreeSet<&Contingency> {
        self.schemes.iter().flat_map(|s| &s.protected).collect()
    }
}

/// All single outages of in-service, non-radial lines.
pub fn non_radial_outages(net: &Network) -> Vec<Contingency> {
    net.lines
        .iter()
        .filter(|l| l.in_service && !l.radial)
        .map(|l| Contingency::line(l.id))
        .collect()
}

/// Variables and expressions describing one operating stage.
#[derive(Debug, Clone)]
pub struct StageLayout {
    pub outage: Outage,
    /// Output per generator (id - 1), p.u.
    pub gen: Vec<LinExpr>,
    /// Load served per bus (id - 1), p.u.
    pub load: Vec<LinExpr>,
    pub flows: BTreeMap<LineId, LinExpr>,
    pub angles: Option<BTreeMap<BusId, VarId>>,
    /// Droop scalar: online units move by `K_i` times this.
    pub droop: Option<VarId>,
}

#[derive(Debug, Clone)]
pub struct TriggerLayout {
    pub scheme: usize,
    /// `[z1, z2, z3]` per monitored line.
    pub lines: BTreeMap<LineId, [VarId; 3]>,
    pub y: VarId,
    pub status: Vec<VarId>,
    pub post: StageLayout,
}

#[derive(Debug, Clone)]
pub struct ContingencyLayout {
    pub contingency: Contingency,
    pub intermediate: StageLayout,
    pub limits_enforced: bool,
    pub trigger: Option<TriggerLayout>,
}

/// A built model plus the map needed to read its solution back.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub kind: FormulationKind,
    pub model: Model,
    pub config: FormulationConfig,
    pub participation: Vec<f64>,
    pub pre: StageLayout,
    pub contingencies: Vec<ContingencyLayout>,
    /// Post-RAS status `z_g^j` per scheme.
    pub trip_vars: Vec<Vec<VarId>>,
    pub reserves: Option<Vec<VarId>>,
}

struct Builder<'a> {
    net: &'a Network,
    cfg: &'a FormulationConfig,
    k: Vec<f64>,
    m: Model,
}

impl<'a> Builder<'a> {
    fn new(net: &'a Network, cfg: &'a FormulationConfig, name: &str) -> Result<Self, FormulationError> {
        net.validate()?;
        cfg.validate(net)?;
        let k = if cfg.balancing.is_empty() {
            net.generators.iter().map(|g| g.participation).collect()
        } else {
            let map = participation_factors(net, &cfg.balancing)?;
            net.generators.iter().map(|g| map[&g.id]).collect()
        };
        Ok(Self {
            net,
            cfg,
            k,
            m: Model::new(name),
        })
    }

    fn base(&self) -> f64 {
        self.net.base_mva
    }

    /// Largest droop scalar any online balancing unit can follow:
    /// `|K_i * s| <= p_max_i` for every unit with `K_i > 0`.
    fn droop_bound(&self) -> Option<f64> {
        self.net
            .generators
            .iter()
            .zip(&self.k)
            .filter(|(g, &k)| g.in_service && k > 0.0)
            .map(|(g, &k)| g.p_max_mw / (k * self.base()))
            .reduce(f64::max)
    }

    fn droop_var(&mut self, name: String) -> Result<VarId, FormulationError> {
        match self.droop_bound().filter(|_| self.cfg.tighten) {
            // with every balancing unit out the scalar is irrelevant, so the
            // bound cuts off nothing
            Some(t) => Ok(self.m.continuous(name, -t, t)?),
            None => Ok(self.m.free(name)?),
        }
    }

    /// Bound on `|flow|` of `line` under `outage` over all injections the
    /// generator limits allow, p.u.
    fn flow_bound(&self, outage: &Outage, line: LineId) -> Result<f64, FormulationError> {
        let base = self.base();
        let from = self.net.line(line).from_bus;
        let island = find_islands(self.net, outage)
            .into_iter()
            .find(|i| i.contains(&from))
            .unwrap_or_default();
        let sf = dcpf::shift_factors(self.net, outage, &island)?;
        let Some(row) = sf.rows.get(&line) else {
            return Ok(0.0);
        };
        let mut bound = 0.0;
        for &(b, c) in row {
            let (mut lo, mut hi) = (0.0, 0.0);
            for g in self.net.generators_at(b).filter(|g| g.in_service) {
                lo += g.p_min_mw;
                hi += g.p_max_mw;
            }
            let pd = self.net.bus(b).base_load_mw;
            bound += (c * (lo - pd)).abs().max((c * (hi - pd)).abs()) / base;
        }
        Ok(bound)
    }

    fn fixed_loads(&self) -> Vec<LinExpr> {
        self.net
            .buses
            .iter()
            .map(|b| LinExpr::constant(b.base_load_mw / self.base()))
            .collect()
    }

    /// Pre-contingency dispatch with quadratic cost, limits and flows.
    fn pre_stage(&mut self) -> Result<StageLayout, FormulationError> {
        let base = self.base();
        let mut gen = Vec::new();
        for g in &self.net.generators {
            let (lo, hi) = if g.in_service {
                (g.p_min_mw / base, g.p_max_mw / base)
            } else {
                (0.0, 0.0)
            };
            let p = self.m.continuous(format!("pg_o_{}", g.id), lo, hi)?;
            if g.in_service {
                self.m.add_quadratic_cost(p, p, g.cost_quad * base * base);
                self.m.add_linear_cost(p, g.cost_lin * base);
                self.m.add_objective_constant(g.cost_const);
            }
            gen.push(LinExpr::var(p));
        }
        let load = self.fixed_loads();
        self.network_stage("o", Outage::new(), gen, load, None, true)
    }

    /// Adds flows (and balance) for a stage and optionally its line limits.
    fn network_stage(
        &mut self,
        tag: &str,
        outage: Outage,
        gen: Vec<LinExpr>,
        load: Vec<LinExpr>,
        droop: Option<VarId>,
        limits: bool,
    ) -> Result<StageLayout, FormulationError> {
        let mut inj: Vec<LinExpr> = load.iter().map(|l| l.scaled(-1.0)).collect();
        for (g, e) in self.net.generators.iter().zip(&gen) {
            inj[g.bus - 1].add_scaled(e, 1.0);
        }
        let (flows, angles) = match self.cfg.encoding {
            NetworkEncoding::Angles => self.angle_flows(tag, &outage, &inj)?,
            NetworkEncoding::ShiftFactors => (self.shift_factor_flows(tag, &outage, &inj)?, None),
        };
        if limits {
            self.line_limits(tag, &flows)?;
        }
        Ok(StageLayout {
            outage,
            gen,
            load,
            flows,
            angles,
            droop,
        })
    }

    fn angle_flows(
        &mut self,
        tag: &str,
        outage: &Outage,
        inj: &[LinExpr],
    ) -> Result<(BTreeMap<LineId, LinExpr>, Option<BTreeMap<BusId, VarId>>), FormulationError> {
        let net = self.net;
        let mut theta = BTreeMap::new();
        for b in &net.buses {
            theta.insert(b.id, self.m.free(format!("th_{tag}_{}", b.id))?);
        }
        for island in find_islands(net, outage) {
            let r = dcpf::reference_bus(net, &island);
            self.m.set_bounds(theta[&r], 0.0, 0.0)?;
        }
        let mut flows = BTreeMap::new();
        let mut net_out: Vec<LinExpr> = inj.iter().map(|e| e.scaled(-1.0)).collect();
        for l in net.surviving_lines(outage) {
            let y = -l.susceptance_pu;
            let f = LinExpr::var(theta[&l.from_bus])
                .term(theta[&l.to_bus], -1.0)
                .scaled(y);
            net_out[l.from_bus - 1].add_scaled(&f, 1.0);
            net_out[l.to_bus - 1].add_scaled(&f, -1.0);
            flows.insert(l.id, f);
        }
        for (b, e) in net_out.into_iter().enumerate() {
            self.m.add_constraint(format!("bal_{tag}_{}", b + 1), e, Sense::Eq, 0.0)?;
        }
        Ok((flows, Some(theta)))
    }

    fn shift_factor_flows(
        &mut self,
        tag: &str,
        outage: &Outage,
        inj: &[LinExpr],
    ) -> Result<BTreeMap<LineId, LinExpr>, FormulationError> {
        let mut flows = BTreeMap::new();
        for island in find_islands(self.net, outage) {
            let mut total = LinExpr::new();
            for &b in &island {
                total.add_scaled(&inj[b - 1], 1.0);
            }
            let first = island.first().copied().unwrap_or(0);
            self.m.add_constraint(format!("bal_{tag}_i{first}"), total, Sense::Eq, 0.0)?;
            let sf = dcpf::shift_factors(self.net, outage, &island)?;
            for (line, row) in sf.rows {
                let mut f = LinExpr::new();
                for (b, c) in row {
                    f.add_scaled(&inj[b - 1], c);
                }
                f.compact();
                flows.insert(line, f);
            }
        }
        Ok(flows)
    }

    fn line_limits(&mut self, tag: &str, flows: &BTreeMap<LineId, LinExpr>) -> Result<(), FormulationError> {
        for (&l, f) in flows {
            let r = self.net.line(l).rating_mw / self.base();
            // most limits never bind; the solver adds them on violation
            let hi = self.m.add_constraint(format!("fmax_{tag}_{l}"), f.clone(), Sense::Le, r)?;
            let lo = self.m.add_constraint(format!("fmin_{tag}_{l}"), f.clone(), Sense::Ge, -r)?;
            self.m.set_lazy(hi)?;
            self.m.set_lazy(lo)?;
        }
        Ok(())
    }

    /// Post-contingency stage before any remedial action: online units
    /// follow the droop rule, loads are unchanged.
    fn intermediate_stage(
        &mut self,
        pre: &StageLayout,
        k: &Contingency,
        limits: bool,
    ) -> Result<StageLayout, FormulationError> {
        let tag = format!("i{k}");
        let s = self.droop_var(format!("droop_{tag}"))?;
        let base = self.base();
        let mut gen = Vec::new();
        for (idx, g) in self.net.generators.iter().enumerate() {
            let mut e = pre.gen[idx].clone();
            if g.in_service && self.k[idx] > 0.0 {
                e.add_term(s, self.k[idx]);
                self.m
                    .add_constraint(format!("pmax_{tag}_{}", g.id), e.clone(), Sense::Le, g.p_max_mw / base)?;
                self.m
                    .add_constraint(format!("pmin_{tag}_{}", g.id), e.clone(), Sense::Ge, g.p_min_mw / base)?;
            }
            gen.push(e);
        }
        let load = pre.load.clone();
        self.network_stage(&tag, k.outaged_lines.clone(), gen, load, Some(s), limits)
    }

    /// Trigger logic, conditional trips, load shedding and the post-RAS
    /// stage for a protected contingency.
    fn ras_stage(
        &mut self,
        inter: &StageLayout,
        k: &Contingency,
        scheme: usize,
        trip: &[VarId],
    ) -> Result<TriggerLayout, FormulationError> {
        let base = self.base();
        let cfg = self.cfg;
        let big_m = cfg.big_m;
        let design = &cfg.schemes[scheme];
        let tag = format!("c{k}");
        let y = self.m.binary(format!("y_{tag}"))?;

        let mut lines = BTreeMap::new();
        let mut sum_z3 = LinExpr::new();
        for &l in &design.monitored_lines {
            let Some(f) = inter.flows.get(&l) else {
                // an outaged monitored line carries nothing and never triggers
                continue;
            };
            let r = self.net.line(l).rating_mw / base;
            // any M >= r + max|f| leaves the rows equivalent
            let big_m = if cfg.tighten {
                big_m.min(r + self.flow_bound(&k.outaged_lines, l)? + 1e-2)
            } else {
                big_m
            };
            let z1 = self.m.binary(format!("z1_{tag}_{l}"))?;
            let z2 = self.m.binary(format!("z2_{tag}_{l}"))?;
            let z3 = self.m.binary(format!("z3_{tag}_{l}"))?;
            let fz = |z: VarId, sign: f64| f.scaled(sign).term(z, -big_m);
            self.m.add_constraint(format!("trg1lo_{tag}_{l}"), fz(z1, 1.0), Sense::Ge, r - big_m)?;
            self.m.add_constraint(format!("trg1hi_{tag}_{l}"), fz(z1, 1.0), Sense::Le, r)?;
            self.m.add_constraint(format!("trg2lo_{tag}_{l}"), fz(z2, -1.0), Sense::Ge, r - big_m)?;
            self.m.add_constraint(format!("trg2hi_{tag}_{l}"), fz(z2, -1.0), Sense::Le, r)?;
            let z12 = LinExpr::var(z1).term(z2, 1.0).term(z3, -1.0);
            self.m.add_constraint(format!("trg3lo_{tag}_{l}"), z12.clone(), Sense::Ge, 0.0)?;
            self.m.add_constraint(format!("trg3hi_{tag}_{l}"), z12, Sense::Le, 0.0)?;
            sum_z3.add_term(z3, 1.0);
            lines.insert(l, [z1, z2, z3]);
        }
        let n_lm = design.monitored_lines.len() as f64;
        self.m
            .add_constraint(format!("ylo_{tag}"), sum_z3.clone().term(y, -1.0), Sense::Ge, 0.0)?;
        self.m
            .add_constraint(format!("yhi_{tag}"), sum_z3.term(y, -n_lm), Sense::Le, 0.0)?;

        // post-RAS statuses follow the shared trip vector when triggered
        let n_gen = self.net.generators.len() as f64;
        let mut status = Vec::new();
        let mut sum_status = LinExpr::new();
        for (idx, g) in self.net.generators.iter().enumerate() {
            let z = self.m.binary(format!("zg_{tag}_{}", g.id))?;
            let d = LinExpr::var(z).term(trip[idx], -1.0);
            self.m
                .add_constraint(format!("zeqhi_{tag}_{}", g.id), d.clone().term(y, 1.0), Sense::Le, 1.0)?;
            self.m
                .add_constraint(format!("zeqlo_{tag}_{}", g.id), d.term(y, -1.0), Sense::Ge, -1.0)?;
            if cfg.tighten {
                // implied by the rows above once y is integral
                self.m.add_constraint(
                    format!("zgej_{tag}_{}", g.id),
                    LinExpr::var(z).term(trip[idx], -1.0),
                    Sense::Ge,
                    0.0,
                )?;
                self.m
                    .add_constraint(format!("zgey_{tag}_{}", g.id), LinExpr::var(z).term(y, 1.0), Sense::Ge, 1.0)?;
            }
            sum_status.add_term(z, 1.0);
            status.push(z);
        }
        self.m
            .add_constraint(format!("notrip_{tag}"), sum_status.term(y, n_gen), Sense::Ge, n_gen)?;

        // sheddable loads, only when triggered
        let mut load = Vec::new();
        for (idx, b) in self.net.buses.iter().enumerate() {
            let pd = inter.load[idx].constant;
            if pd == 0.0 {
                load.push(LinExpr::new());
                continue;
            }
            let v = self.m.continuous(format!("pd_{tag}_{}", b.id), 0.0, pd)?;
            self.m
                .add_constraint(format!("shed_{tag}_{}", b.id), LinExpr::var(v).term(y, pd), Sense::Ge, pd)?;
            self.m.add_linear_cost(v, -self.cfg.gamma * base);
            self.m.add_objective_constant(self.cfg.gamma * base * pd);
            load.push(LinExpr::var(v));
        }

        // droop redispatch for units that stay online, zero for tripped ones
        let t = self.droop_var(format!("droop_{tag}"))?;
        let t_max = self.droop_bound().unwrap_or(0.0);
        let mut gen = Vec::new();
        for (idx, g) in self.net.generators.iter().enumerate() {
            let hi = if g.in_service { g.p_max_mw / base } else { 0.0 };
            // |P^c - P^i - K t| <= 2 p_max + K t_max whenever t is bounded
            let big_m = if cfg.tighten {
                big_m.min(2.0 * hi + self.k[idx] * t_max + 1e-2)
            } else {
                big_m
            };
            let p = self.m.continuous(format!("pg_{tag}_{}", g.id), 0.0, hi)?;
            let z = status[idx];
            self.m.add_constraint(
                format!("pzmax_{tag}_{}", g.id),
                LinExpr::var(p).term(z, -hi),
                Sense::Le,
                0.0,
            )?;
            self.m.add_constraint(
                format!("pzmin_{tag}_{}", g.id),
                LinExpr::var(p).term(z, -g.p_min_mw / base),
                Sense::Ge,
                0.0,
            )?;
            let mut dev = LinExpr::var(p);
            dev.add_scaled(&inter.gen[idx], -1.0);
            dev.add_term(t, -self.k[idx]);
            self.m.add_constraint(
                format!("drphi_{tag}_{}", g.id),
                dev.clone().term(z, big_m),
                Sense::Le,
                big_m,
            )?;
            self.m.add_constraint(
                format!("drplo_{tag}_{}", g.id),
                dev.term(z, -big_m),
                Sense::Ge,
                -big_m,
            )?;
            gen.push(LinExpr::var(p));
        }
        let post = self.network_stage(&tag, k.outaged_lines.clone(), gen, load, Some(t), true)?;
        Ok(TriggerLayout {
            scheme,
            lines,
            y,
            status,
            post,
        })
    }

    fn finish(
        self,
        kind: FormulationKind,
        pre: StageLayout,
        contingencies: Vec<ContingencyLayout>,
        trip_vars: Vec<Vec<VarId>>,
        reserves: Option<Vec<VarId>>,
    ) -> Result<Formulation, FormulationError> {
        self.m.validate()?;
        Ok(Formulation {
            kind,
            model: self.m,
            config: self.cfg.clone(),
            participation: self.k,
            pre,
            contingencies,
            trip_vars,
            reserves,
        })
    }
}

/// Pre-contingency economic dispatch.
pub fn build_opf(net: &Network, cfg: &FormulationConfig) -> Result<Formulation, FormulationError> {
    let mut b = Builder::new(net, cfg, "opf")?;
    let pre = b.pre_stage()?;
    b.finish(FormulationKind::Opf, pre, Vec::new(), Vec::new(), None)
}

/// Dispatch that stays within limits right after every contingency.
pub fn build_scopf(net: &Network, cfg: &FormulationConfig) -> Result<Formulation, FormulationError> {
    let mut b = Builder::new(net, cfg, "scopf")?;
    let pre = b.pre_stage()?;
    let mut conts = Vec::new();
    for k in &cfg.contingencies {
        let inter = b.intermediate_stage(&pre, k, true)?;
        conts.push(ContingencyLayout {
            contingency: k.clone(),
            intermediate: inter,
            limits_enforced: true,
            trigger: None,
        });
    }
    b.finish(FormulationKind::Scopf, pre, conts, Vec::new(), None)
}

/// Joint design of dispatch and remedial action.
pub fn build_ras_scopf(net: &Network, cfg: &FormulationConfig) -> Result<Formulation, FormulationError> {
    if cfg.schemes.is_empty() || cfg.schemes.iter().all(|s| s.protected.is_empty()) {
        return Err(FormulationError::Config(
            "RAS-SCOPF needs at least one scheme with protected contingencies".into(),
        ));
    }
    let mut b = Builder::new(net, cfg, "ras_scopf")?;
    let pre = b.pre_stage()?;

    let n_gen = net.generators.len() as f64;
    let mut trip_vars = Vec::new();
    for j in 0..cfg.schemes.len() {
        let mut vars = Vec::new();
        let mut sum = LinExpr::new();
        for (idx, g) in net.generators.iter().enumerate() {
            let z = b.m.binary(format!("zg_s{}_{}", j + 1, g.id))?;
            if cfg.forbid_balancing_trips && b.k[idx] > 0.0 {
                b.m.set_bounds(z, 1.0, 1.0)?;
            }
            b.m.add_linear_cost(z, -cfg.rho);
            b.m.add_objective_constant(cfg.rho);
            sum.add_term(z, 1.0);
            vars.push(z);
        }
        b.m.add_constraint(format!("mintrip_s{}", j + 1), sum, Sense::Le, n_gen - 1.0)?;
        trip_vars.push(vars);
    }

    let mut conts = Vec::new();
    for k in &cfg.contingencies {
        let scheme = cfg.scheme_of(k);
        let inter = b.intermediate_stage(&pre, k, scheme.is_none())?;
        let trigger = match scheme {
            Some(j) => Some(b.ras_stage(&inter, k, j, &trip_vars[j].clone())?),
            None => None,
        };
        conts.push(ContingencyLayout {
            contingency: k.clone(),
            intermediate: inter,
            limits_enforced: scheme.is_none(),
            trigger,
        });
    }
    b.finish(FormulationKind::RasScopf, pre, conts, trip_vars, None)
}

/// SCOPF without limits on protected contingencies, with reserve headroom
/// for picking up the scheme's tripped generation.
pub fn build_ras_aware_scopf(
    net: &Network,
    cfg: &FormulationConfig,
    scheme: &RasScheme,
) -> Result<Formulation, FormulationError> {
    if let Some(&g) = scheme.trip_set.iter().find(|&&g| g == 0 || g > net.generators.len()) {
        return Err(NetworkError::UnknownGenerator(g).into());
    }
    let mut cfg = cfg.clone();
    cfg.schemes = vec![scheme.design()];
    let mut b = Builder::new(net, &cfg, "ras_aware_scopf")?;
    let pre = b.pre_stage()?;
    let protected: BTreeSet<Contingency> = cfg.protected().into_iter().cloned().collect();

    let mut conts = Vec::new();
    for k in &cfg.contingencies {
        if protected.contains(k) {
            continue;
        }
        let inter = b.intermediate_stage(&pre, k, true)?;
        conts.push(ContingencyLayout {
            contingency: k.clone(),
            intermediate: inter,
            limits_enforced: true,
            trigger: None,
        });
    }

    let mut reserves = None;
    if !protected.is_empty() {
        let base = b.base();
        let mut tripped = LinExpr::new();
        for &g in &scheme.trip_set {
            tripped.add_scaled(&pre.gen[g - 1], 1.0);
        }
        let mut vars = Vec::new();
        for (idx, g) in net.generators.iter().enumerate() {
            let r = b.m.continuous(format!("r_{}", g.id), 0.0, f64::INFINITY)?;
            let head = pre.gen[idx].clone().term(r, 1.0);
            let cap = if g.in_service { g.p_max_mw / base } else { 0.0 };
            b.m.add_constraint(format!("rcap_{}", g.id), head, Sense::Le, cap)?;
            let need = LinExpr::var(r).term_expr(&tripped, -b.k[idx]);
            b.m.add_constraint(format!("rneed_{}", g.id), need, Sense::Ge, 0.0)?;
            vars.push(r);
        }
        reserves = Some(vars);
    }
    b.finish(FormulationKind::RasAwareScopf, pre, conts, Vec::new(), reserves)
}

trait TermExpr {
    fn term_expr(self, e: &LinExpr, scale: f64) -> LinExpr;
}

impl TermExpr for LinExpr {
    fn term_expr(mut self, e: &LinExpr, scale: f64) -> LinExpr {
        self.add_scaled(e, scale);
        self
    }
}

pub fn build(
    kind: FormulationKind,
    net: &Network,
    cfg: &FormulationConfig,
    scheme: Option<&RasScheme>,
) -> Result<Formulation, FormulationError> {
    match kind {
        FormulationKind::Opf => build_opf(net, cfg),
        FormulationKind::Scopf => build_scopf(net, cfg),
        FormulationKind::RasScopf => build_ras_scopf(net, cfg),
        FormulationKind::RasAwareScopf => {
            let scheme = scheme.ok_or_else(|| {
                FormulationError::Config("RAS-aware SCOPF needs a designed scheme".into())
            })?;
            build_ras_aware_scopf(net, cfg, scheme)
        }
    }
}

/// Operating point of one stage, in MW and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub outage: Outage,
    pub gen_mw: Vec<f64>,
    pub load_mw: Vec<f64>,
    pub gen_online: Vec<bool>,
    pub angles: BTreeMap<BusId, f64>,
    pub flows_mw: BTreeMap<LineId, f64>,
    /// Droop scalar in MW (output change of a unit with `K = 1`).
    pub droop_mw: f64,
    /// Mismatch term absorbed on top of the explicit imbalance, MW.
    pub mismatch_mw: f64,
}

impl StageState {
    pub fn generation_mw(&self) -> f64 {
        self.gen_mw.iter().sum()
    }

    pub fn served_mw(&self) -> f64 {
        self.load_mw.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    pub scheme: usize,
    /// `(z1, z2, z3)` per monitored line.
    pub lines: BTreeMap<LineId, (bool, bool, bool)>,
    pub triggered: bool,
    pub post: StageState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyState {
    pub contingency: Contingency,
    pub limits_enforced: bool,
    pub intermediate: StageState,
    pub trigger: Option<TriggerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub kind: FormulationKind,
    pub objective: f64,
    /// Pre-contingency generation cost including no-load constants, $.
    pub generation_cost: f64,
    pub shed_penalty: f64,
    pub trip_penalty: f64,
    pub pre: StageState,
    pub contingencies: Vec<ContingencyState>,
    pub schemes: Vec<RasScheme>,
    pub reserves_mw: Option<Vec<f64>>,
    pub nodes: usize,
    pub gap: f64,
}

impl DispatchSolution {
    pub fn total_shed_mw(&self) -> f64 {
        self.contingencies
            .iter()
            .filter_map(|c| c.trigger.as_ref())
            .map(|t| t.post.outage_shed(&self.pre))
            .sum()
    }
}

impl StageState {
    fn outage_shed(&self, pre: &StageState) -> f64 {
        (pre.served_mw() - self.served_mw()).max(0.0)
    }
}

fn eval(e: &LinExpr, x: &[f64]) -> f64 {
    e.eval(x)
}

/// Allowed flow deviation between the model and a DC re-solve.
const CONSISTENCY_TOL_PU: f64 = 1e-6;

fn stage_state(
    net: &Network,
    stage: &StageLayout,
    x: &[f64],
    online: Vec<bool>,
    prev: Option<&StageState>,
    k: &[f64],
    name: &str,
) -> Result<StageState, FormulationError> {
    let base = net.base_mva;
    let gen_mw: Vec<f64> = stage.gen.iter().map(|e| eval(e, x) * base).collect();
    let load_mw: Vec<f64> = stage.load.iter().map(|e| eval(e, x) * base).collect();
    let model_flows: BTreeMap<LineId, f64> = stage
        .flows
        .iter()
        .map(|(&l, e)| (l, eval(e, x) * base))
        .collect();

    // DC re-solve per island; the reference bus absorbs solver roundoff
    let mut inj = InjectionVector::from_dispatch(net, &gen_mw, &load_mw);
    let mut angles = BTreeMap::new();
    let mut flows_mw = BTreeMap::new();
    for island in find_islands(net, &stage.outage) {
        let residual = inj.island_sum(&island);
        let r = dcpf::reference_bus(net, &island);
        inj.0[r - 1] -= residual;
        let sol = dcpf::solve_island(net, &stage.outage, &island, &inj)?;
        angles.extend(sol.angles);
        flows_mw.extend(sol.flows);
    }
    for (&l, &f) in &model_flows {
        let dev = (flows_mw[&l] - f).abs() / base;
        if dev > CONSISTENCY_TOL_PU {
            return Err(FormulationError::Inconsistent {
                stage: name.to_string(),
                line: l,
                deviation_pu: dev,
            });
        }
    }
    let droop_mw = stage.droop.map_or(0.0, |v| x[v.0] * base);
    let mismatch_mw = match prev {
        Some(p) => {
            let d_load: f64 = load_mw.iter().zip(&p.load_mw).map(|(a, b)| a - b).sum();
            let d_gen: f64 = p.gen_mw.iter().zip(&gen_mw).map(|(a, b)| a - b).sum();
            let _ = k;
            droop_mw - d_load - d_gen
        }
        None => 0.0,
    };
    Ok(StageState {
        outage: stage.outage.clone(),
        gen_mw,
        load_mw,
        gen_online: online,
        angles,
        flows_mw,
        droop_mw,
        mismatch_mw,
    })
}

/// Reads a solved model back into MW quantities and re-checks every stage
/// against an independent DC power flow.
pub fn extract_solution(
    f: &Formulation,
    s: &MipSolution,
    net: &Network,
) -> Result<DispatchSolution, FormulationError> {
    if s.status != SolveStatus::Optimal {
        return Err(FormulationError::NotOptimal {
            kind: f.kind,
            status: s.status,
        });
    }
    let x = &s.values;
    let bit = |v: VarId| x[v.0] > 0.5;
    let in_service: Vec<bool> = net.generators.iter().map(|g| g.in_service).collect();
    let pre = stage_state(net, &f.pre, x, in_service.clone(), None, &f.participation, "pre-contingency")?;
    let generation_cost: f64 = net
        .generators
        .iter()
        .zip(&pre.gen_mw)
        .filter(|(g, _)| g.in_service)
        .map(|(g, &p)| g.cost(p))
        .sum();

    let mut schemes = Vec::new();
    let mut trip_penalty = 0.0;
    for (j, vars) in f.trip_vars.iter().enumerate() {
        let trip_set: BTreeSet<GenId> = vars
            .iter()
            .zip(&net.generators)
            .filter(|(&v, _)| !bit(v))
            .map(|(_, g)| g.id)
            .collect();
        trip_penalty += f.config.rho * trip_set.len() as f64;
        let d = &f.config.schemes[j];
        schemes.push(RasScheme {
            monitored_lines: d.monitored_lines.clone(),
            protected: d.protected.clone(),
            trip_set,
            triggered: false,
        });
    }

    let mut contingencies = Vec::new();
    let mut shed_penalty = 0.0;
    for c in &f.contingencies {
        let name = format!("contingency {}", c.contingency);
        let inter = stage_state(
            net,
            &c.intermediate,
            x,
            in_service.clone(),
            Some(&pre),
            &f.participation,
            &format!("{name} intermediate"),
        )?;
        let trigger = match &c.trigger {
            Some(t) => {
                let online: Vec<bool> = t.status.iter().map(|&v| bit(v)).collect();
                let post = stage_state(
                    net,
                    &t.post,
                    x,
                    online,
                    Some(&inter),
                    &f.participation,
                    &format!("{name} post-RAS"),
                )?;
                shed_penalty += f.config.gamma * (inter.served_mw() - post.served_mw()).max(0.0);
                Some(TriggerState {
                    scheme: t.scheme,
                    lines: t
                        .lines
                        .iter()
                        .map(|(&l, z)| (l, (bit(z[0]), bit(z[1]), bit(z[2]))))
                        .collect(),
                    triggered: bit(t.y),
                    post,
                })
            }
            None => None,
        };
        contingencies.push(ContingencyState {
            contingency: c.contingency.clone(),
            limits_enforced: c.limits_enforced,
            intermediate: inter,
            trigger,
        });
    }
    let reserves_mw = f
        .reserves
        .as_ref()
        .map(|v| v.iter().map(|r| x[r.0] * net.base_mva).collect());
    Ok(DispatchSolution {
        kind: f.kind,
        objective: s.objective,
        generation_cost,
        shed_penalty,
        trip_penalty,
        pre,
        contingencies,
        schemes,
        reserves_mw,
        nodes: s.nodes,
        gap: s.gap,
    })
}

/// Builds, solves and extracts in one go.
pub fn solve(
    kind: FormulationKind,
    net: &Network,
    cfg: &FormulationConfig,
    scheme: Option<&RasScheme>,
    opts: &BranchOptions,
) -> Result<DispatchSolution, FormulationError> {
    let f = build(kind, net, cfg, scheme)?;
    let s = branch_and_bound(&f.model, opts)?;
    if s.status != SolveStatus::Optimal {
        return Err(FormulationError::NotOptimal { kind, status: s.status });
    }
    extract_solution(&f, &s, net)
}

/// Like [`solve`], but with every quadratic cost replaced by `segments`
/// secant pieces so that each node is a linear program.
pub fn solve_linearized(
    kind: FormulationKind,
    net: &Network,
    cfg: &FormulationConfig,
    scheme: Option<&RasScheme>,
    opts: &BranchOptions,
    segments: usize,
) -> Result<DispatchSolution, FormulationError> {
    let f = build(kind, net, cfg, scheme)?;
    let lin = linearize_objective(&f.model, segments)?;
    let s = branch_and_bound(&lin, opts)?;
    if s.status != SolveStatus::Optimal {
        return Err(FormulationError::NotOptimal { kind, status: s.status });
    }
    extract_solution(&f, &s, net)
}
