//! Independent checks of dispatch solutions against the physics and the
//! trigger, trip and shed rules.

use std::collections::{BTreeMap, BTreeSet};

use miqp::BranchOptions;
use rand::Rng;
use rascopf::dcpf;
use rascopf::formulations::{
    non_radial_outages, solve, DispatchSolution, FormulationConfig, FormulationError, FormulationKind, SchemeDesign,
    StageState,
};
use rascopf::network::{participation_factors, Contingency, GenId, Network};

use super::{random_grid, GridShape};

/// Slack for comparisons that go through a solver, MW.
pub const MW_TOL: f64 = 1e-4;
/// Relative band around a rating inside which either trigger value is
/// accepted.
pub const BOUNDARY_TOL: f64 = 1e-5;

fn k_factors(net: &Network, cfg: &FormulationConfig) -> Vec<f64> {
    let k: BTreeMap<GenId, f64> = if cfg.balancing.is_empty() {
        net.generators.iter().map(|g| (g.id, g.participation)).collect()
    } else {
        participation_factors(net, &cfg.balancing).unwrap()
    };
    net.generators.iter().map(|g| k[&g.id]).collect()
}

fn balanced(stage: &StageState, what: &str) -> Result<(), String> {
    let gap = stage.generation_mw() - stage.served_mw();
    if gap.abs() > MW_TOL {
        return Err(format!("{what}: generation exceeds load served by {gap} MW"));
    }
    Ok(())
}

fn within_limits(net: &Network, stage: &StageState, what: &str) -> Result<(), String> {
    for (&l, &f) in &stage.flows_mw {
        let r = net.line(l).rating_mw;
        if f.abs() > r * (1.0 + BOUNDARY_TOL) + MW_TOL {
            return Err(format!("{what}: line {l} carries {f} MW over rating {r}"));
        }
    }
    Ok(())
}

fn droop_follows(
    net: &Network,
    k: &[f64],
    prev: &StageState,
    stage: &StageState,
    online: &[bool],
    what: &str,
) -> Result<(), String> {
    for (idx, g) in net.generators.iter().enumerate() {
        let expect = if !online[idx] {
            0.0
        } else if g.in_service && k[idx] > 0.0 {
            prev.gen_mw[idx] + k[idx] * stage.droop_mw
        } else {
            prev.gen_mw[idx]
        };
        let got = stage.gen_mw[idx];
        if (got - expect).abs() > MW_TOL {
            return Err(format!("{what}: generator {} at {got} MW, droop gives {expect}", g.id));
        }
    }
    Ok(())
}

/// Checks trigger soundness, trip conditionality, no shed without a
/// trigger, droop consistency and post-RAS limits on a solved dispatch.
pub fn check_dispatch(net: &Network, cfg: &FormulationConfig, sol: &DispatchSolution) -> Result<(), String> {
    let k = k_factors(net, cfg);
    let all_on: Vec<bool> = net.generators.iter().map(|g| g.in_service).collect();
    balanced(&sol.pre, "pre-contingency")?;
    within_limits(net, &sol.pre, "pre-contingency")?;

    for c in &sol.contingencies {
        let name = format!("contingency {}", c.contingency);
        let inter = &c.intermediate;
        balanced(inter, &name)?;
        droop_follows(net, &k, &sol.pre, inter, &all_on, &format!("{name} intermediate"))?;
        if c.limits_enforced {
            within_limits(net, inter, &name)?;
        }
        let Some(t) = &c.trigger else { continue };
        let scheme = &sol.schemes[t.scheme];

        // z3 reflects the intermediate overload, z1 and z2 its direction
        let mut any = false;
        for (&l, &(z1, z2, z3)) in &t.lines {
            let f = inter.flows_mw.get(&l).copied().unwrap_or(0.0);
            let r = net.line(l).rating_mw;
            if z3 != (z1 || z2) {
                return Err(format!("{name}: z3 on line {l} is not z1 or z2"));
            }
            if f.abs() > r * (1.0 + BOUNDARY_TOL) && !z3 {
                return Err(format!("{name}: line {l} at {f} MW over {r} but not flagged"));
            }
            if f.abs() < r * (1.0 - BOUNDARY_TOL) && z3 {
                return Err(format!("{name}: line {l} at {f} MW within {r} but flagged"));
            }
            if z1 && f < r * (1.0 - BOUNDARY_TOL) || z2 && f > -r * (1.0 - BOUNDARY_TOL) {
                return Err(format!("{name}: direction flags on line {l} disagree with {f} MW"));
            }
            any |= z3;
        }
        if any != t.triggered {
            return Err(format!("{name}: trigger {} but line flags {any}", t.triggered));
        }

        let post = &t.post;
        let expect_online: Vec<bool> = if t.triggered {
            net.generators
                .iter()
                .map(|g| g.in_service && !scheme.trip_set.contains(&g.id))
                .collect()
        } else {
            all_on.clone()
        };
        if post.gen_online != expect_online {
            return Err(format!("{name}: post-RAS statuses do not follow the trip rule"));
        }
        if !t.triggered {
            for (b, (a, c)) in post.load_mw.iter().zip(&inter.load_mw).enumerate() {
                if (a - c).abs() > MW_TOL {
                    return Err(format!("{name}: bus {} shed {} MW without a trigger", b + 1, c - a));
                }
            }
        }
        for (b, (a, c)) in post.load_mw.iter().zip(&inter.load_mw).enumerate() {
            if *a < -MW_TOL || *a > c + MW_TOL {
                return Err(format!("{name}: bus {} serves {a} MW of {c}", b + 1));
            }
        }
        balanced(post, &format!("{name} post-RAS"))?;
        droop_follows(net, &k, inter, post, &expect_online, &format!("{name} post-RAS"))?;
        within_limits(net, post, &format!("{name} post-RAS"))?;
    }
    // the designed trip set must be non-empty when some scheme fired
    for (j, s) in sol.schemes.iter().enumerate() {
        let fired = sol
            .contingencies
            .iter()
            .filter_map(|c| c.trigger.as_ref())
            .any(|t| t.scheme == j && t.triggered);
        if fired && s.trip_set.is_empty() {
            return Err(format!("scheme {} fired with an empty trip set", j + 1));
        }
    }
    Ok(())
}

/// OPF objective <= RAS-SCOPF generation cost <= SCOPF objective, with a
/// relative slack for the solver gap. An infeasible SCOPF bounds nothing.
pub fn check_cost_ordering(opf: f64, ras_cost: f64, scopf: Option<f64>) -> Result<(), String> {
    let slack = |v: f64| 1e-5 * v.abs().max(1.0);
    if opf > ras_cost + slack(ras_cost) {
        return Err(format!("OPF {opf} above RAS-SCOPF generation cost {ras_cost}"));
    }
    if let Some(s) = scopf {
        if ras_cost > s + slack(s) {
            return Err(format!("RAS-SCOPF generation cost {ras_cost} above SCOPF {s}"));
        }
    }
    Ok(())
}

/// A small random case with one scheme watching a line that some of the
/// protected outages overload under the unconstrained OPF dispatch.
pub fn random_ras_case<R: Rng>(rng: &mut R) -> Option<(Network, FormulationConfig)> {
    let shape = GridShape {
        buses: (4, 6),
        generators: (2, 3),
        ..GridShape::default()
    };
    let mut net = random_grid(rng, shape);
    let outages = non_radial_outages(&net);
    if outages.len() < 3 {
        return None;
    }
    let balancing: Vec<GenId> = net.generators.iter().map(|g| g.id).collect();
    let mut cfg = FormulationConfig {
        gamma: 5000.0,
        rho: 1000.0,
        big_m: 100.0,
        contingencies: outages.clone(),
        schemes: Vec::new(),
        balancing,
        forbid_balancing_trips: false,
        encoding: Default::default(),
        tighten: rng.gen_bool(0.5),
    };
    let opf = solve(FormulationKind::Opf, &net, &cfg, None, &BranchOptions::default()).ok()?;
    let inj = dcpf::InjectionVector::from_dispatch(&net, &opf.pre.gen_mw, &net.loads_mw());

    // watch the line whose worst post-outage flow grows the most
    let base = post_outage_flows(&net, &Contingency { outaged_lines: BTreeSet::new() }, &inj)?;
    let mut best: Option<(usize, f64, f64)> = None;
    for l in net.lines.iter().filter(|l| !l.radial) {
        let f0 = base.get(&l.id).copied().unwrap_or(0.0).abs();
        let mut worst: f64 = 0.0;
        for k in outages.iter().filter(|k| !k.outaged_lines.contains(&l.id)) {
            let f = post_outage_flows(&net, k, &inj)?;
            worst = worst.max(f.get(&l.id).copied().unwrap_or(0.0).abs());
        }
        if worst > f0 + 1.0 && best.map_or(true, |b| worst - f0 > b.2 - b.1) {
            best = Some((l.id, f0, worst));
        }
    }
    let (line, f0, worst) = best?;
    net.lines[line - 1].rating_mw = (f0 + worst) / 2.0;
    cfg.schemes = vec![SchemeDesign {
        monitored_lines: BTreeSet::from([line]),
        protected: outages
            .iter()
            .filter(|k| !k.outaged_lines.contains(&line))
            .cloned()
            .collect(),
    }];
    Some((net, cfg))
}

fn post_outage_flows(
    net: &Network,
    k: &Contingency,
    inj: &dcpf::InjectionVector,
) -> Option<BTreeMap<usize, f64>> {
    let islands = rascopf::network::find_islands(net, &k.outaged_lines);
    if islands.len() != 1 {
        return None;
    }
    Some(dcpf::solve_island(net, &k.outaged_lines, &islands[0], inj).ok()?.flows)
}

/// Solves OPF, RAS-SCOPF and SCOPF and runs every check.
pub fn check_case(net: &Network, cfg: &FormulationConfig) -> Result<DispatchSolution, String> {
    let opts = BranchOptions::default();
    let run = |kind| solve(kind, net, cfg, None, &opts);
    let opf = run(FormulationKind::Opf).map_err(|e| format!("OPF: {e}"))?;
    let ras = run(FormulationKind::RasScopf).map_err(|e| format!("RAS-SCOPF: {e}"))?;
    let scopf = match run(FormulationKind::Scopf) {
        Ok(s) => Some(s.objective),
        Err(FormulationError::NotOptimal { .. }) => None,
        Err(e) => return Err(format!("SCOPF: {e}")),
    };
    check_dispatch(net, cfg, &opf)?;
    check_dispatch(net, cfg, &ras)?;
    check_cost_ordering(opf.objective, ras.generation_cost, scopf)?;
    Ok(ras)
}
