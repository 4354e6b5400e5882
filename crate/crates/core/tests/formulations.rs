mod support;

use std::collections::BTreeSet;

use miqp::{branch_and_bound, export_mps, linearize_objective, parse_mps, BranchOptions, SolveStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rascopf::formulations::*;
use rascopf::network::*;
use support::logic::{check_case, check_dispatch, random_ras_case};
use support::CASE;

fn study() -> Network {
    prepare_study_case(&parse_case(CASE).unwrap()).unwrap()
}

fn opts() -> BranchOptions {
    BranchOptions::default()
}

fn bare(net: &Network) -> FormulationConfig {
    FormulationConfig {
        contingencies: Vec::new(),
        schemes: Vec::new(),
        balancing: net.generators.iter().map(|g| g.id).collect(),
        ..FormulationConfig::case_study(net)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn single_bus_dispatch_cost() {
    let net = parse_case_str("[buses]\n1 100\n[generators]\n1 1 0 200 0 10 0\n").unwrap();
    let sol = solve(FormulationKind::Opf, &net, &bare(&net), None, &opts()).unwrap();
    assert!((sol.generation_cost - 1000.0).abs() < 1e-6);
    assert!((sol.pre.gen_mw[0] - 100.0).abs() < 1e-6);
}

#[test]
fn load_above_capacity_is_infeasible() {
    let net = parse_case_str("[buses]\n1 300\n[generators]\n1 1 0 200 0 10 0\n").unwrap();
    let err = solve(FormulationKind::Opf, &net, &bare(&net), None, &opts()).unwrap_err();
    assert!(matches!(
        err,
        FormulationError::NotOptimal {
            status: SolveStatus::Infeasible,
            ..
        }
    ));
}

#[test]
fn study_opf_has_no_contingency_states() {
    let net = study();
    let cfg = FormulationConfig::case_study(&net);
    let sol = solve(FormulationKind::Opf, &net, &cfg, None, &opts()).unwrap();
    assert!(sol.contingencies.is_empty());
    assert!(sol.schemes.is_empty());
    assert!(sol.reserves_mw.is_none());
    // the DC re-solve reproduces the extracted flows
    let inj = rascopf::dcpf::InjectionVector::from_dispatch(&net, &sol.pre.gen_mw, &sol.pre.load_mw);
    let island = find_islands(&net, &Outage::new()).remove(0);
    let dc = rascopf::dcpf::solve_island(&net, &Outage::new(), &island, &inj).unwrap();
    for (l, f) in &dc.flows {
        assert!((f - sol.pre.flows_mw[l]).abs() / net.base_mva < 1e-6);
    }
}

#[test]
fn empty_security_set_reduces_to_opf() {
    let net = study();
    let mut cfg = FormulationConfig::case_study(&net);
    let opf = solve(FormulationKind::Opf, &net, &cfg, None, &opts()).unwrap();
    cfg.contingencies.clear();
    cfg.schemes.clear();
    let scopf = solve(FormulationKind::Scopf, &net, &cfg, None, &opts()).unwrap();
    assert!(rel(opf.objective, scopf.objective) < 1e-6);
}

#[test]
fn study_ras_scopf_model_validates() {
    let net = study();
    let f = build_ras_scopf(&net, &FormulationConfig::case_study(&net)).unwrap();
    f.model.validate().unwrap();
    // three flags per monitored line and one trigger per protected outage,
    // a status per generator per protected outage, plus the shared trip vector
    let ng = net.generators.len();
    assert_eq!(f.model.num_binaries(), 6 * (3 + 1 + ng) + ng);
    assert_eq!(f.trip_vars.len(), 1);
}

#[test]
fn ras_aware_scopf_sits_between_opf_and_scopf() {
    let net = study();
    let cfg = FormulationConfig::case_study(&net);
    let scheme = RasScheme {
        monitored_lines: BTreeSet::from([23]),
        protected: cfg.schemes[0].protected.clone(),
        trip_set: BTreeSet::from([22]),
        triggered: false,
    };
    let opf = solve(FormulationKind::Opf, &net, &cfg, None, &opts()).unwrap();
    let scopf = solve(FormulationKind::Scopf, &net, &cfg, None, &opts()).unwrap();
    let aware = solve(FormulationKind::RasAwareScopf, &net, &cfg, Some(&scheme), &opts()).unwrap();
    assert!(opf.objective <= aware.objective + 1e-6);
    assert!(aware.objective <= scopf.objective + 1e-6);
    // reserve covers each unit's share of the tripped output
    let k = participation_factors(&net, &cfg.balancing).unwrap();
    let tripped = aware.pre.gen_mw[21];
    let r = aware.reserves_mw.as_ref().unwrap();
    for g in &net.generators {
        assert!(r[g.id - 1] >= k[&g.id] * tripped - 1e-6);
        assert!(aware.pre.gen_mw[g.id - 1] + r[g.id - 1] <= g.p_max_mw + 1e-6);
    }
}

#[test]
fn ras_aware_without_trips_is_scopf_over_unprotected() {
    let net = study();
    let cfg = FormulationConfig::case_study(&net);
    let scheme = RasScheme {
        monitored_lines: BTreeSet::from([23]),
        protected: cfg.schemes[0].protected.clone(),
        trip_set: BTreeSet::new(),
        triggered: false,
    };
    let aware = solve(FormulationKind::RasAwareScopf, &net, &cfg, Some(&scheme), &opts()).unwrap();
    let mut reduced = cfg.clone();
    reduced.contingencies.retain(|k| !scheme.protected.contains(k));
    reduced.schemes.clear();
    let scopf = solve(FormulationKind::Scopf, &net, &reduced, None, &opts()).unwrap();
    assert!(rel(aware.objective, scopf.objective) < 1e-6);
}

#[test]
fn ras_aware_needs_a_scheme() {
    let net = study();
    let cfg = FormulationConfig::case_study(&net);
    assert!(matches!(
        build(FormulationKind::RasAwareScopf, &net, &cfg, None),
        Err(FormulationError::Config(_))
    ));
}

#[test]
fn config_validation() {
    let net = study();
    let mut cfg = FormulationConfig::case_study(&net);
    cfg.gamma = 0.0;
    assert!(build_opf(&net, &cfg).is_err());
    let mut cfg = FormulationConfig::case_study(&net);
    cfg.contingencies.retain(|k| k != &Contingency::line(7));
    assert!(matches!(build_ras_scopf(&net, &cfg), Err(FormulationError::Config(_))));
    let mut cfg = FormulationConfig::case_study(&net);
    let dup = cfg.schemes[0].clone();
    cfg.schemes.push(dup);
    assert!(matches!(build_ras_scopf(&net, &cfg), Err(FormulationError::Config(_))));
}

#[test]
fn unreachable_trigger_never_fires() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut net, mut cfg) = (0..50).find_map(|_| random_ras_case(&mut rng)).unwrap();
    let line = *cfg.schemes[0].monitored_lines.first().unwrap();
    // beyond any possible flow, yet inside the big-M range
    let cap: f64 = net.generators.iter().map(|g| g.p_max_mw).sum();
    net.lines[line - 1].rating_mw = 2.0 * cap;
    cfg.schemes[0].protected = cfg.contingencies.clone();
    cfg.schemes[0].protected.retain(|k| !k.outaged_lines.contains(&line));
    let ras = solve(FormulationKind::RasScopf, &net, &cfg, None, &opts()).unwrap();
    assert!(ras
        .contingencies
        .iter()
        .filter_map(|c| c.trigger.as_ref())
        .all(|t| !t.triggered));
    assert!(ras.shed_penalty.abs() < 1e-4);
    // with nothing triggered every post-RAS stage is a limit-checked copy of
    // the intermediate one, which is what the SCOPF imposes
    let scopf = solve(FormulationKind::Scopf, &net, &cfg, None, &opts()).unwrap();
    assert!(rel(ras.generation_cost, scopf.objective) < 1e-5);
}

#[test]
fn encodings_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 4 {
        let Some((net, mut cfg)) = random_ras_case(&mut rng) else { continue };
        let a = solve(FormulationKind::RasScopf, &net, &cfg, None, &opts()).unwrap();
        cfg.encoding = NetworkEncoding::Angles;
        let b = solve(FormulationKind::RasScopf, &net, &cfg, None, &opts()).unwrap();
        assert!(rel(a.objective, b.objective) < 1e-5, "{} vs {}", a.objective, b.objective);
        check_dispatch(&net, &cfg, &b).unwrap();
        checked += 1;
    }
}

#[test]
fn random_cases_satisfy_dispatch_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 5 {
        let Some((net, cfg)) = random_ras_case(&mut rng) else { continue };
        check_case(&net, &cfg).unwrap();
        checked += 1;
    }
}

#[test]
fn linearized_opf_converges_from_above() {
    let net = study();
    let cfg = FormulationConfig::case_study(&net);
    let f = build_opf(&net, &cfg).unwrap();
    let exact = branch_and_bound(&f.model, &opts()).unwrap().objective;
    let mut prev = f64::INFINITY;
    for segments in [1, 4, 16, 64] {
        let lin = linearize_objective(&f.model, segments).unwrap();
        let obj = branch_and_bound(&lin, &opts()).unwrap().objective;
        assert!(obj >= exact - 1e-6 && obj <= prev + 1e-6, "{segments}: {obj}");
        prev = obj;
    }
    assert!(rel(prev, exact) < 1e-4);
}

#[test]
fn study_scopf_exports_and_reparses() {
    let net = study();
    let f = build_scopf(&net, &FormulationConfig::case_study(&net)).unwrap();
    let back = parse_mps(&export_mps(&f.model).unwrap()).unwrap();
    assert_eq!(back.num_vars(), f.model.num_vars());
    assert_eq!(back.num_constraints(), f.model.num_constraints());
    let a = branch_and_bound(&f.model, &opts()).unwrap().objective;
    let b = branch_and_bound(&back, &opts()).unwrap().objective;
    assert!(rel(a, b) < 1e-6);
}
