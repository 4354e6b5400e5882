//! Continuous relaxation solves.
//!
//! Binaries are relaxed to `[0, 1]` unless fixed. Fixed variables (and any
//! variable with `lower == upper`) are substituted out before the subproblem
//! reaches the interior-point backend so that it never sees an empty
//! interior.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

use crate::error::SolveError;
use crate::model::{ConstrId, Model, Sense, VarId, VarKind};
use crate::solution::{MipSolution, SolveStatus};

/// Partial 0/1 assignment of binary variables.
pub type Fixings = BTreeMap<VarId, bool>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationOptions {
    pub max_iter: u32,
    /// Interior-point gap/feasibility tolerance.
    pub tolerance: f64,
    /// Wall-clock limit per subproblem in seconds.
    pub time_limit: f64,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tolerance: 1e-9,
            time_limit: f64::INFINITY,
        }
    }
}

/// Solves the relaxation of `model` with `fixed` binaries pinned.
pub fn solve_relaxation(model: &Model, fixed: &Fixings) -> Result<MipSolution, SolveError> {
    Relaxation::new(model)?.solve(fixed, &RelaxationOptions::default())
}

/// Column-oriented copy of a model, reused across many relaxation solves.
#[derive(Debug, Clone)]
pub struct Relaxation<'a> {
    model: &'a Model,
    columns: Vec<Vec<(usize, f64)>>,
    active: Vec<bool>,
}

impl<'a> Relaxation<'a> {
    pub fn new(model: &'a Model) -> Result<Self, SolveError> {
        model.validate()?;
        let mut columns = vec![Vec::new(); model.num_vars()];
        for (r, c) in model.constraints().iter().enumerate() {
            for &(v, a) in &c.terms {
                columns[v.0].push((r, a));
            }
        }
        let active = vec![true; model.num_constraints()];
        Ok(Self {
            model,
            columns,
            active,
        })
    }

    /// Like [`Relaxation::new`] but with the model's lazy rows left out
    /// until [`Relaxation::separate`] finds them violated.
    pub fn with_lazy_rows(model: &'a Model) -> Result<Self, SolveError> {
        let mut r = Self::new(model)?;
        for (i, a) in r.active.iter_mut().enumerate() {
            *a = !model.is_lazy(ConstrId(i));
        }
        Ok(r)
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Activates every inactive row that `x` violates by more than `tol`
    /// and returns how many were added.
    pub fn separate(&mut self, x: &[f64], tol: f64) -> usize {
        let mut added = 0;
        for (r, c) in self.model.constraints().iter().enumerate() {
            if !self.active[r] && c.violation(x) > tol {
                self.active[r] = true;
                added += 1;
            }
        }
        added
    }

    /// Largest violation over bounds and active rows.
    fn violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .model
            .constraints()
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(c, _)| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = self
            .model
            .variables()
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    pub fn solve(
        &self,
        fixed: &Fixings,
        opts: &RelaxationOptions,
    ) -> Result<MipSolution, SolveError> {
        let model = self.model;
        let n = model.num_vars();
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for v in model.variables() {
            lower.push(v.lower);
            upper.push(v.upper);
        }
        for (&v, &val) in fixed {
            let var = model
                .variables()
                .get(v.0)
                .ok_or_else(|| SolveError::InvalidFixing(format!("#{}", v.0)))?;
            if var.kind != VarKind::Binary {
                return Err(SolveError::InvalidFixing(var.name.clone()));
            }
            let x = if val { 1.0 } else { 0.0 };
            if x < var.lower || x > var.upper {
                return Ok(MipSolution::infeasible());
            }
            lower[v.0] = x;
            upper[v.0] = x;
        }
        self.solve_with_bounds(&lower, &upper, opts)
    }

    pub(crate) fn solve_with_bounds(
        &self,
        lower: &[f64],
        upper: &[f64],
        opts: &RelaxationOptions,
    ) -> Result<MipSolution, SolveError> {
        let first = self.solve_once(lower, upper, opts)?;
        if first.status != SolveStatus::Optimal {
            return Ok(first);
        }
        // Interior points stop short of bounds when the cost is flat there.
        // Pin the stragglers and keep the result if it is no worse.
        let (mut lo, mut up) = (lower.to_vec(), upper.to_vec());
        let mut snapped = false;
        for i in 0..lo.len() {
            if lo[i] == up[i] {
                continue;
            }
            let v = first.values[i];
            for bound in [lower[i], upper[i]] {
                let d = (v - bound).abs();
                if d > 1e-9 * bound.abs().max(1.0) && d <= 1e-4 {
                    lo[i] = bound;
                    up[i] = bound;
                    snapped = true;
                }
            }
        }
        if !snapped {
            return Ok(first);
        }
        let second = self.solve_once(&lo, &up, opts)?;
        let slack = 1e-9 * first.objective.abs().max(1.0);
        if second.status == SolveStatus::Optimal
            && second.objective <= first.objective + slack
            && self.violation(&second.values) <= 1e-9
        {
            Ok(MipSolution {
                kkt_residual: second.kkt_residual.min(first.kkt_residual),
                ..second
            })
        } else {
            Ok(first)
        }
    }

    fn solve_once(
        &self,
        lower: &[f64],
        upper: &[f64],
        opts: &RelaxationOptions,
    ) -> Result<MipSolution, SolveError> {
        let model = self.model;
        let n = model.num_vars();

        // free columns get consecutive indices; fixed ones are substituted
        let mut col_of = vec![usize::MAX; n];
        let mut free_vars = Vec::new();
        let mut x = vec![0.0; n];
        for i in 0..n {
            if lower[i] == upper[i] {
                x[i] = lower[i];
            } else {
                col_of[i] = free_vars.len();
                free_vars.push(i);
            }
        }
        let nf = free_vars.len();

        // right-hand sides after substitution
        let cons = model.constraints();
        let mut rhs: Vec<f64> = cons.iter().map(|c| c.rhs).collect();
        let mut live = vec![false; cons.len()];
        for (r, c) in cons.iter().enumerate() {
            if !self.active[r] {
                continue;
            }
            for &(v, a) in &c.terms {
                if col_of[v.0] == usize::MAX {
                    rhs[r] -= a * x[v.0];
                } else {
                    live[r] = true;
                }
            }
        }
        let feas_tol = 1e-9;
        for (r, c) in cons.iter().enumerate() {
            if live[r] || !self.active[r] {
                continue;
            }
            let ok = match c.sense {
                Sense::Le => 0.0 <= rhs[r] + feas_tol,
                Sense::Ge => 0.0 >= rhs[r] - feas_tol,
                Sense::Eq => rhs[r].abs() <= feas_tol,
            };
            if !ok {
                return Ok(MipSolution::infeasible());
            }
        }

        // objective after substitution: 0.5 x'Px + q'x + const
        let obj = model.objective();
        let mut q = vec![0.0; nf];
        for &(v, c) in &obj.linear {
            match col_of[v.0] {
                usize::MAX => {}
                k => q[k] += c,
            }
        }
        let mut p_trip: Vec<(usize, usize, f64)> = Vec::new();
        for &(i, j, c) in &obj.quadratic {
            match (col_of[i.0], col_of[j.0]) {
                (usize::MAX, usize::MAX) => {}
                (usize::MAX, k) => q[k] += c * x[i.0],
                (k, usize::MAX) => q[k] += c * x[j.0],
                (a, b) if a == b => p_trip.push((a, a, 2.0 * c)),
                (a, b) => p_trip.push((a.min(b), a.max(b), c)),
            }
        }

        // rows: equalities first (zero cone), then inequalities (s >= 0)
        let mut eq_rows: Vec<usize> = Vec::new();
        let mut in_rows: Vec<(usize, f64)> = Vec::new(); // (constraint, sign)
        for (r, c) in cons.iter().enumerate() {
            if !live[r] {
                continue;
            }
            match c.sense {
                Sense::Eq => eq_rows.push(r),
                Sense::Le => in_rows.push((r, 1.0)),
                Sense::Ge => in_rows.push((r, -1.0)),
            }
        }
        let mut a_trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut row_of = vec![(usize::MAX, 0.0); cons.len()];
        for &r in &eq_rows {
            row_of[r] = (b.len(), 1.0);
            b.push(rhs[r]);
        }
        let n_eq = b.len();
        for &(r, sign) in &in_rows {
            row_of[r] = (b.len(), sign);
            b.push(sign * rhs[r]);
        }
        for (k, &i) in free_vars.iter().enumerate() {
            for &(r, a) in &self.columns[i] {
                let (row, sign) = row_of[r];
                if row == usize::MAX {
                    continue;
                }
                a_trip.push((row, k, sign * a));
            }
        }
        for (k, &i) in free_vars.iter().enumerate() {
            if upper[i].is_finite() {
                a_trip.push((b.len(), k, 1.0));
                b.push(upper[i]);
            }
            if lower[i].is_finite() {
                a_trip.push((b.len(), k, -1.0));
                b.push(-lower[i]);
            }
        }
        if nf == 0 {
            let objective = model.objective().eval(&x);
            return Ok(MipSolution::optimal(x, objective, 0.0));
        }
        if b.is_empty() {
            // an always-satisfied dummy row keeps the backend happy
            a_trip.push((0, 0, 0.0));
            b.push(1.0);
        }
        let m = b.len();
        let a_mat = csc_from_triplets(m, nf, a_trip, false);
        let p_mat = csc_from_triplets(nf, nf, p_trip, true);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if n_eq > 0 {
            cones.push(ZeroConeT(n_eq));
        }
        if m > n_eq {
            cones.push(NonnegativeConeT(m - n_eq));
        }

        let data = Problem {
            p: &p_mat,
            q: &q,
            a: &a_mat,
            b: &b,
            cones: &cones,
        };
        let mut attempt = run_backend(&data, opts, opts.tolerance, false)?;
        if !attempt.decisive() {
            // looser tolerances with equilibration and presolve usually rescue
            // badly scaled or nearly degenerate subproblems
            attempt = run_backend(&data, opts, opts.tolerance.max(1e-8) * 10.0, true)?;
        }
        for (k, &i) in free_vars.iter().enumerate() {
            x[i] = attempt.x[k];
        }
        let status = match attempt.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                return Ok(MipSolution::infeasible());
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                return Ok(MipSolution::unbounded());
            }
            SolverStatus::MaxIterations | SolverStatus::MaxTime
                if self.violation(&x) > 1e-6 =>
            {
                SolveStatus::IterationLimit
            }
            other => {
                if self.violation(&x) <= 1e-6 {
                    // stalled but feasible: accept the last iterate
                    SolveStatus::Optimal
                } else if phase_one(&data, opts)? > 1e-7 {
                    return Ok(MipSolution::infeasible());
                } else {
                    return Err(SolveError::Backend(format!("{other:?}")));
                }
            }
        };
        let sol = &attempt;
        let kkt = kkt_residual(&p_mat, &q, &a_mat, &b, &sol.x, &sol.z, &sol.s);
        let objective = model.objective().eval(&x);
        let mut out = MipSolution::optimal(x, objective, kkt);
        out.status = status;
        Ok(out)
    }
}

struct Problem<'p> {
    p: &'p CscMatrix<f64>,
    q: &'p [f64],
    a: &'p CscMatrix<f64>,
    b: &'p [f64],
    cones: &'p [SupportedConeT<f64>],
}

struct Attempt {
    status: SolverStatus,
    x: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

impl Attempt {
    fn decisive(&self) -> bool {
        matches!(
            self.status,
            SolverStatus::Solved
                | SolverStatus::PrimalInfeasible
                | SolverStatus::DualInfeasible
        )
    }
}

fn run_backend(
    data: &Problem<'_>,
    opts: &RelaxationOptions,
    tol: f64,
    rescue: bool,
) -> Result<Attempt, SolveError> {
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(if rescue { opts.max_iter * 2 } else { opts.max_iter })
        .time_limit(opts.time_limit)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol)
        .tol_infeas_abs(tol)
        .tol_infeas_rel(tol)
        .presolve_enable(rescue)
        .build()
        .map_err(|e| SolveError::Backend(e.to_string()))?;
    let mut solver = DefaultSolver::new(data.p, data.q, data.a, data.b, data.cones, settings)
        .map_err(|e| SolveError::Backend(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    Ok(Attempt {
        status: sol.status,
        x: sol.x.clone(),
        z: sol.z.clone(),
        s: sol.s.clone(),
    })
}

/// Minimum total constraint violation, used to settle feasibility when the
/// main solve stalls.
fn phase_one(data: &Problem<'_>, opts: &RelaxationOptions) -> Result<f64, SolveError> {
    let (m, n) = (data.b.len(), data.q.len());
    let n_eq: usize = data
        .cones
        .iter()
        .map(|c| match c {
            ZeroConeT(k) => *k,
            _ => 0,
        })
        .sum();
    // columns: x, one slack per inequality row, two per equality row
    let n_slack = (m - n_eq) + 2 * n_eq;
    let mut trip = Vec::new();
    for j in 0..n {
        for idx in data.a.colptr[j]..data.a.colptr[j + 1] {
            trip.push((data.a.rowval[idx], j, data.a.nzval[idx]));
        }
    }
    let mut col = n;
    for r in 0..m {
        trip.push((r, col, -1.0));
        col += 1;
        if r < n_eq {
            trip.push((r, col, 1.0));
            col += 1;
        }
    }
    let mut b = data.b.to_vec();
    let mut rows = m;
    for k in n..n + n_slack {
        trip.push((rows, k, -1.0));
        b.push(0.0);
        rows += 1;
    }
    let a = csc_from_triplets(rows, n + n_slack, trip, false);
    let p = csc_from_triplets(n + n_slack, n + n_slack, Vec::new(), true);
    let mut q = vec![0.0; n + n_slack];
    q[n..].iter_mut().for_each(|v| *v = 1.0);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    cones.push(NonnegativeConeT(rows - n_eq));
    let data = Problem {
        p: &p,
        q: &q,
        a: &a,
        b: &b,
        cones: &cones,
    };
    let res = run_backend(&data, opts, 1e-9, true)?;
    Ok(res.x[n..].iter().map(|v| v.max(0.0)).sum())
}

/// Scaled KKT residual of `min 0.5x'Px + q'x  s.t. Ax + s = b, s in K`.
fn kkt_residual(
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    x: &[f64],
    z: &[f64],
    s: &[f64],
) -> f64 {
    let n = q.len();
    let m = b.len();
    // stationarity: Px + q + A'z
    let mut px = vec![0.0; n];
    for j in 0..n {
        for idx in p.colptr[j]..p.colptr[j + 1] {
            let i = p.rowval[idx];
            let v = p.nzval[idx];
            px[i] += v * x[j];
            if i != j {
                px[j] += v * x[i];
            }
        }
    }
    let mut atz = vec![0.0; n];
    let mut ax = vec![0.0; m];
    for j in 0..n {
        for idx in a.colptr[j]..a.colptr[j + 1] {
            let i = a.rowval[idx];
            atz[j] += a.nzval[idx] * z[i];
            ax[i] += a.nzval[idx] * x[j];
        }
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let dual: Vec<f64> = (0..n).map(|j| px[j] + q[j] + atz[j]).collect();
    let r_dual = inf(&dual) / (1.0 + inf(&px).max(inf(q)).max(inf(&atz)));
    let prim: Vec<f64> = (0..m).map(|i| ax[i] + s[i] - b[i]).collect();
    let r_prim = inf(&prim) / (1.0 + inf(&ax).max(inf(b)));
    let comp: f64 = s.iter().zip(z).map(|(s, z)| s * z).sum::<f64>().abs();
    let xpx: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
    let qx: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
    let r_comp = comp / (1.0 + (0.5 * xpx + qx).abs());
    r_dual.max(r_prim).max(r_comp)
}

/// Builds a CSC matrix, summing duplicates. With `upper` only entries on or
/// above the diagonal are kept.
pub(crate) fn csc_from_triplets(
    m: usize,
    n: usize,
    mut trip: Vec<(usize, usize, f64)>,
    upper: bool,
) -> CscMatrix<f64> {
    if upper {
        trip.retain(|&(i, j, _)| i <= j);
    }
    trip.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(trip.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(trip.len());
    let mut last: Option<(usize, usize)> = None;
    for (i, j, v) in trip {
        if last == Some((i, j)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(i);
        nzval.push(v);
        colptr[j + 1] += 1;
        last = Some((i, j));
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinExpr;

    #[test]
    fn min_square_above_one() {
        let mut m = Model::new("t");
        let x = m.free("x").unwrap();
        m.add_quadratic_cost(x, x, 1.0);
        m.add_constraint("c", LinExpr::var(x), Sense::Ge, 1.0).unwrap();
        let s = solve_relaxation(&m, &Fixings::new()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[0] - 1.0).abs() < 1e-7);
        assert!((s.objective - 1.0).abs() < 1e-7);
        assert!(s.kkt_residual <= 1e-7, "{}", s.kkt_residual);
    }

    #[test]
    fn unbounded_linear() {
        let mut m = Model::new("t");
        let x = m.free("x").unwrap();
        m.add_linear_cost(x, 1.0);
        let s = solve_relaxation(&m, &Fixings::new()).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn relaxed_binary_with_flat_optimum() {
        // min x^2 + y, x in [0,2], y in [0,1], x + y >= 1.5: the cost is flat
        // in y at the optimum
        let mut m = Model::new("t");
        let x = m.continuous("x", 0.0, 2.0).unwrap();
        let y = m.binary("y").unwrap();
        m.add_quadratic_cost(x, x, 1.0);
        m.add_linear_cost(y, 1.0);
        m.add_constraint("c", LinExpr::var(x).term(y, 1.0), Sense::Ge, 1.5)
            .unwrap();
        let s = solve_relaxation(&m, &Fixings::new()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective - 1.25).abs() < 1e-6);
        assert!((s.values[y.0] - 1.0).abs() < 1e-6);
        assert!((s.values[x.0] - 0.5).abs() < 1e-6);
        assert!(s.kkt_residual <= 1e-7);
    }

    #[test]
    fn relaxed_binary_hits_its_bound() {
        // min x^2 + 0.5 y, x in [0,2], y in [0,1], x + y >= 1.5
        let mut m = Model::new("t");
        let x = m.continuous("x", 0.0, 2.0).unwrap();
        let y = m.binary("y").unwrap();
        m.add_quadratic_cost(x, x, 1.0);
        m.add_linear_cost(y, 0.5);
        m.add_constraint("c", LinExpr::var(x).term(y, 1.0), Sense::Ge, 1.5)
            .unwrap();
        let s = solve_relaxation(&m, &Fixings::new()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[y.0] - 1.0).abs() < 1e-6);
        assert!((s.values[x.0] - 0.5).abs() < 1e-6);
        assert!((s.objective - 0.75).abs() < 1e-6);
        assert!(s.kkt_residual <= 1e-7);
    }

    #[test]
    fn fixing_propagates_and_detects_infeasibility() {
        let mut m = Model::new("t");
        let x = m.continuous("x", 0.0, 1.0).unwrap();
        let y = m.binary("y").unwrap();
        m.add_linear_cost(x, 1.0);
        m.add_constraint("c", LinExpr::var(x).term(y, 1.0), Sense::Ge, 1.5)
            .unwrap();
        let mut f = Fixings::new();
        f.insert(y, false);
        let s = solve_relaxation(&m, &f).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        f.insert(y, true);
        let s = solve_relaxation(&m, &f).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[x.0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn fully_fixed_model_is_evaluated_directly() {
        let mut m = Model::new("t");
        let y = m.binary("y").unwrap();
        m.add_linear_cost(y, 3.0);
        m.add_objective_constant(1.0);
        let mut f = Fixings::new();
        f.insert(y, true);
        let s = solve_relaxation(&m, &f).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.objective, 4.0);
    }

    #[test]
    fn cross_quadratic_terms() {
        // min x^2 + xy + y^2 - x  (PD) -> x = 2/3, y = -1/3
        let mut m = Model::new("t");
        let x = m.free("x").unwrap();
        let y = m.free("y").unwrap();
        m.add_quadratic_cost(x, x, 1.0);
        m.add_quadratic_cost(x, y, 1.0);
        m.add_quadratic_cost(y, y, 1.0);
        m.add_linear_cost(x, -1.0);
        let s = solve_relaxation(&m, &Fixings::new()).unwrap();
        assert!((s.values[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((s.values[1] + 1.0 / 3.0).abs() < 1e-6);
    }
}
