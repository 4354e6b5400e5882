//! Best-bound branch and bound over continuous relaxations.
//!
//! Branching picks the most fractional binary (ties by declaration order);
//! both children are solved as soon as they are created so the queue is
//! ordered by their own relaxation bounds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::error::SolveError;
use crate::model::{Model, VarId};
use crate::relax::{Fixings, Relaxation, RelaxationOptions};
use crate::solution::{relative_gap, MipSolution, SolveStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOptions {
    pub relative_gap: f64,
    pub integrality_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub node_limit: usize,
    /// Dive from the root to an incumbent before the best-bound search.
    pub dive: bool,
    /// Seconds; `f64::INFINITY` disables the limit. A time limit makes the
    /// result depend on machine speed.
    pub time_limit: f64,
    pub relaxation: RelaxationOptions,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            relative_gap: 1e-6,
            integrality_tolerance: 1e-6,
            feasibility_tolerance: 1e-6,
            node_limit: 200_000,
            dive: true,
            time_limit: f64::INFINITY,
            relaxation: RelaxationOptions::default(),
        }
    }
}

/// Per-node record kept for diagnostics and for checking bound monotonicity.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub bound: f64,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct BranchAndBoundResult {
    pub solution: MipSolution,
    pub log: Vec<NodeRecord>,
}

struct Node {
    id: usize,
    bound: f64,
    fixings: Fixings,
    values: Vec<f64>,
    depth: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound first, then older node first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub fn branch_and_bound(model: &Model, opts: &BranchOptions) -> Result<MipSolution, SolveError> {
    branch_and_bound_logged(model, opts).map(|r| r.solution)
}

pub fn branch_and_bound_logged(
    model: &Model,
    opts: &BranchOptions,
) -> Result<BranchAndBoundResult, SolveError> {
    let mut relax = Relaxation::with_lazy_rows(model)?;
    let binaries: Vec<VarId> = model.binaries().collect();
    let start = Instant::now();
    let mut log = Vec::new();

    let root = solve_node(&mut relax, &Fixings::new(), opts)?;
    log.push(NodeRecord {
        id: 0,
        parent: None,
        bound: root.objective,
        depth: 0,
    });
    match root.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible | SolveStatus::Unbounded => {
            return Ok(BranchAndBoundResult {
                solution: root,
                log,
            })
        }
        SolveStatus::IterationLimit => {
            return Err(SolveError::Backend(
                "root relaxation hit its iteration limit".into(),
            ))
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        bound: root.objective,
        fixings: Fixings::new(),
        values: root.values,
        depth: 0,
    });
    let mut next_id = 1;
    let mut last_kkt = root.kkt_residual;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if opts.dive {
        if let Some(found) = dive(&mut relax, &binaries, &heap.peek().expect("root").values, opts)? {
            last_kkt = found.kkt_residual;
            incumbent = Some((found.objective, found.values));
        }
    }
    let mut limit_hit = false;

    while let Some(node) = heap.pop() {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |i| i.0);
        if relative_gap(inc_obj, node.bound) <= opts.relative_gap {
            // best-bound order: every remaining node is at least as bad
            heap.push(node);
            break;
        }
        if next_id >= opts.node_limit || start.elapsed().as_secs_f64() > opts.time_limit {
            heap.push(node);
            limit_hit = true;
            break;
        }

        let branch_var = most_fractional(&binaries, &node.values, opts.integrality_tolerance);
        let Some(var) = branch_var else {
            // integral relaxation: polish with binaries pinned exactly
            let mut pinned = node.fixings.clone();
            for &b in &binaries {
                pinned.insert(b, node.values[b.0] > 0.5);
            }
            let polished = solve_node(&mut relax, &pinned, opts)?;
            if polished.status == SolveStatus::Optimal
                && model.max_violation(&polished.values) <= opts.feasibility_tolerance
                && polished.objective < inc_obj
            {
                last_kkt = polished.kkt_residual;
                incumbent = Some((polished.objective, polished.values));
            }
            continue;
        };

        for value in [false, true] {
            let mut fixings = node.fixings.clone();
            fixings.insert(var, value);
            let child = solve_node(&mut relax, &fixings, opts)?;
            let id = next_id;
            next_id += 1;
            if child.status != SolveStatus::Optimal {
                continue;
            }
            // the child can never beat its parent; clamp tiny solver noise
            let bound = child.objective.max(node.bound);
            log.push(NodeRecord {
                id,
                parent: Some(node.id),
                bound: child.objective,
                depth: node.depth + 1,
            });
            if relative_gap(inc_obj, bound) <= opts.relative_gap {
                continue;
            }
            heap.push(Node {
                id,
                bound,
                fixings,
                values: child.values,
                depth: node.depth + 1,
            });
        }
    }

    let best_bound = heap
        .peek()
        .map_or(f64::INFINITY, |n| n.bound)
        .min(incumbent.as_ref().map_or(f64::INFINITY, |i| i.0));
    let solution = match incumbent {
        Some((objective, mut values)) => {
            for &b in &binaries {
                values[b.0] = values[b.0].round();
            }
            MipSolution {
                status: if limit_hit {
                    SolveStatus::IterationLimit
                } else {
                    SolveStatus::Optimal
                },
                values,
                objective,
                best_bound,
                gap: relative_gap(objective, best_bound),
                nodes: next_id,
                kkt_residual: last_kkt,
            }
        }
        None => MipSolution {
            status: if limit_hit {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Infeasible
            },
            values: Vec::new(),
            objective: f64::INFINITY,
            best_bound,
            gap: f64::INFINITY,
            nodes: next_id,
            kkt_residual: f64::INFINITY,
        },
    };
    Ok(BranchAndBoundResult { solution, log })
}

/// Solves a node relaxation, adding violated lazy rows until none is left.
fn solve_node(
    relax: &mut Relaxation<'_>,
    fixings: &Fixings,
    opts: &BranchOptions,
) -> Result<MipSolution, SolveError> {
    loop {
        let s = relax.solve(fixings, &opts.relaxation)?;
        if s.status != SolveStatus::Optimal || relax.separate(&s.values, opts.feasibility_tolerance) == 0 {
            return Ok(s);
        }
    }
}

/// Rounds its way down from the root: binaries that are already integral
/// are fixed, the most fractional one goes to its nearer value (the other
/// value if that is infeasible). Returns a polished incumbent or `None`.
fn dive(
    relax: &mut Relaxation<'_>,
    binaries: &[VarId],
    root: &[f64],
    opts: &BranchOptions,
) -> Result<Option<MipSolution>, SolveError> {
    let tol = opts.integrality_tolerance;
    let mut fixings = Fixings::new();
    let mut values = root.to_vec();
    for _ in 0..=binaries.len() {
        for &b in binaries {
            let v = values[b.0];
            if v.min(1.0 - v) <= tol {
                fixings.entry(b).or_insert(v > 0.5);
            }
        }
        let Some(var) = most_fractional(binaries, &values, tol) else {
            let mut pinned = fixings.clone();
            for &b in binaries {
                pinned.insert(b, values[b.0] > 0.5);
            }
            let s = solve_node(relax, &pinned, opts)?;
            let ok = s.status == SolveStatus::Optimal
                && relax.model().max_violation(&s.values) <= opts.feasibility_tolerance;
            return Ok(ok.then_some(s));
        };
        let near = values[var.0] > 0.5;
        let mut next = None;
        for value in [near, !near] {
            fixings.insert(var, value);
            let s = solve_node(relax, &fixings, opts)?;
            if s.status == SolveStatus::Optimal {
                next = Some(s);
                break;
            }
        }
        match next {
            Some(s) => values = s.values,
            None => return Ok(None),
        }
    }
    Ok(None)
}

/// Binary with the largest `min(x, 1 - x)`, first declared on ties.
fn most_fractional(binaries: &[VarId], x: &[f64], tol: f64) -> Option<VarId> {
    let mut best: Option<(VarId, f64)> = None;
    for &b in binaries {
        let v = x[b.0];
        let frac = v.min(1.0 - v);
        if frac > tol && best.is_none_or(|(_, f)| frac > f) {
            best = Some((b, frac));
        }
    }
    best.map(|(b, _)| b)
}
