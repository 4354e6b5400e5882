#![allow(dead_code)]

use miqp::{Fixings, LinExpr, Model, Relaxation, RelaxationOptions, Sense, SolveStatus, VarId};
use rand::Rng;

/// Random convex mixed-binary QP: a few bounded continuous variables with a
/// PSD quadratic cost, binaries with linear costs, coupling rows and
/// big-M style on/off links.
pub fn random_model<R: Rng>(rng: &mut R, max_binaries: usize) -> Model {
    let nb = rng.gen_range(1..=max_binaries);
    let nc = rng.gen_range(1..=4);
    let mut m = Model::new("rand");
    let xs: Vec<VarId> = (0..nc)
        .map(|i| m.continuous(format!("x{i}"), -5.0, 5.0).unwrap())
        .collect();
    let bs: Vec<VarId> = (0..nb).map(|i| m.binary(format!("b{i}")).unwrap()).collect();

    // Q = L L^T + diag
    let l: Vec<Vec<f64>> = (0..nc)
        .map(|_| (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for i in 0..nc {
        for j in i..nc {
            let mut q: f64 = (0..nc).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                q += rng.gen_range(0.05..1.0);
                m.add_quadratic_cost(xs[i], xs[i], q);
            } else {
                m.add_quadratic_cost(xs[i], xs[j], 2.0 * q);
            }
        }
        m.add_linear_cost(xs[i], rng.gen_range(-3.0..3.0));
    }
    for &b in &bs {
        m.add_linear_cost(b, rng.gen_range(-4.0..4.0));
    }

    // rows satisfied by a random reference point keep most models feasible
    let x_ref: Vec<f64> = (0..nc).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let b_ref: Vec<f64> = (0..nb).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
    let rows = rng.gen_range(1..=nb + 2);
    for r in 0..rows {
        let mut e = LinExpr::new();
        let mut lhs = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            if rng.gen_bool(0.6) {
                let a = rng.gen_range(-2.0..2.0);
                e.add_term(x, a);
                lhs += a * x_ref[i];
            }
        }
        for (j, &b) in bs.iter().enumerate() {
            if rng.gen_bool(0.5) {
                let a = rng.gen_range(-3.0..3.0);
                e.add_term(b, a);
                lhs += a * b_ref[j];
            }
        }
        let slack = if rng.gen_bool(0.9) { rng.gen_range(0.0..1.0) } else { -1.0 };
        let (sense, rhs) = match rng.gen_range(0..3) {
            0 => (Sense::Le, lhs + slack),
            1 => (Sense::Ge, lhs - slack),
            _ => (Sense::Eq, lhs),
        };
        m.add_constraint(format!("r{r}"), e, sense, rhs).unwrap();
    }
    // x_i limited to [-5 b, 5 b] for a random binary
    for (i, &x) in xs.iter().enumerate() {
        if rng.gen_bool(0.5) {
            let b = bs[rng.gen_range(0..nb)];
            m.add_constraint(format!("on{i}"), LinExpr::var(x).term(b, -5.0), Sense::Le, 0.0)
                .unwrap();
            m.add_constraint(format!("off{i}"), LinExpr::var(x).term(b, 5.0), Sense::Ge, 0.0)
                .unwrap();
        }
    }
    m
}

/// Exhaustive search over all binary assignments.
pub fn enumerate(model: &Model) -> Option<f64> {
    let relax = Relaxation::new(model).unwrap();
    let bins: Vec<VarId> = model.binaries().collect();
    let opts = RelaxationOptions::default();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let fix: Fixings = bins
            .iter()
            .enumerate()
            .map(|(k, &b)| (b, mask >> k & 1 == 1))
            .collect();
        let s = relax.solve(&fix, &opts).unwrap();
        if s.status == SolveStatus::Optimal && best.is_none_or(|v| s.objective < v) {
            best = Some(s.objective);
        }
    }
    best
}
