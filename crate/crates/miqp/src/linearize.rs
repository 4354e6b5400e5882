//! Piecewise-linear replacement of separable quadratic costs, for MILP-only
//! solvers.

use std::collections::BTreeMap;

use crate::error::ModelError;
use crate::model::{LinExpr, Model, Sense, VarId};

/// Replaces every `c * x^2` term by secants over `segments` equal pieces of
/// `[lower, upper]`, using incremental segment variables. The result
/// over-estimates the quadratic by at most `c * w^2 / 4` per variable, with
/// `w = (upper - lower) / segments`.
pub fn linearize_objective(model: &Model, segments: usize) -> Result<Model, ModelError> {
    if segments == 0 {
        return Err(ModelError::InvalidSegments);
    }
    let objective = model.objective();
    if !objective.is_separable() {
        return Err(ModelError::NonSeparable);
    }
    if !objective.has_quadratic() {
        return Ok(model.clone());
    }

    let mut coeffs: BTreeMap<VarId, f64> = BTreeMap::new();
    for &(i, _, c) in &objective.quadratic {
        *coeffs.entry(i).or_insert(0.0) += c;
    }

    let mut out = model.clone();
    out.objective_mut().quadratic.clear();
    for (&x, &c) in &coeffs {
        if c == 0.0 {
            continue;
        }
        let var = model.variable(x);
        let (lo, hi) = (var.lower, var.upper);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::UnboundedLinearization(var.name.clone()));
        }
        if c < 0.0 {
            return Err(ModelError::NotConvex(format!(
                "negative quadratic coefficient on `{}`",
                var.name
            )));
        }
        let w = (hi - lo) / segments as f64;
        out.add_objective_constant(c * lo * lo);
        if w == 0.0 {
            continue;
        }
        // x = lo + sum of increments; convexity makes the LP fill them in order
        let mut link = LinExpr::var(x);
        for s in 0..segments {
            let d = out.continuous(format!("{}_pwl{s}", var.name), 0.0, w)?;
            out.add_linear_cost(d, c * (2.0 * lo + (2 * s + 1) as f64 * w));
            link.add_term(d, -1.0);
        }
        out.add_constraint(format!("{}_pwl", var.name), link, Sense::Eq, lo)?;
    }
    Ok(out)
}
