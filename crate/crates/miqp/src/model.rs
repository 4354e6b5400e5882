//! Model container: variables, linear constraints and a convex quadratic
//! objective (minimisation).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::ModelError;

/// Index of a variable inside the [`Model`] that declared it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a constraint inside its [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstrId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Linear expression `sum(coef * var) + constant`.
///
/// Adding the same variable twice merges the coefficients lazily; call
/// [`LinExpr::compact`] (done automatically when a constraint is added).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, v: VarId, c: f64) -> Self {
        self.add_term(v, c);
        self
    }

    pub fn add_term(&mut self, v: VarId, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms
            .extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
        self.constant += scale * other.constant;
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::new();
        out.add_scaled(self, scale);
        out
    }

    /// Merges duplicate variables and drops zero coefficients. Order is by
    /// variable index, so equal expressions compact to identical term lists.
    pub fn compact(&mut self) {
        if self.terms.is_empty() {
            return;
        }
        self.terms.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.terms = merged;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }
}

/// `constant + sum(linear) + sum(c * x_i * x_j)` over the quadratic terms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub quadratic: Vec<(VarId, VarId, f64)>,
    pub linear: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(v, c)| c * x[v.0]).sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&(i, j, c)| c * x[i.0] * x[j.0])
            .sum();
        self.constant + lin + quad
    }

    pub fn is_separable(&self) -> bool {
        self.quadratic.iter().all(|&(i, j, _)| i == j)
    }

    pub fn has_quadratic(&self) -> bool {
        self.quadratic.iter().any(|&(_, _, c)| c != 0.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Model {
    pub name: String,
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
    names: HashMap<String, VarId>,
    constraint_names: HashMap<String, ConstrId>,
    lazy: BTreeSet<ConstrId>,
}

impl Model {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, ModelError> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(ModelError::DuplicateVariable(name));
        }
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(ModelError::InvalidBounds { name, lower, upper });
        }
        if kind == VarKind::Binary && (lower < 0.0 || upper > 1.0) {
            return Err(ModelError::InvalidBounds { name, lower, upper });
        }
        let id = VarId(self.variables.len());
        self.names.insert(name.clone(), id);
        self.variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        Ok(id)
    }

    pub fn continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, ModelError> {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn free(&mut self, name: impl Into<String>) -> Result<VarId, ModelError> {
        self.add_var(name, VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> Result<VarId, ModelError> {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    /// Adds `expr (sense) rhs`; the expression's constant is moved to the
    /// right-hand side.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        mut expr: LinExpr,
        sense: Sense,
        rhs: f64,
    ) -> Result<ConstrId, ModelError> {
        let name = name.into();
        if self.constraint_names.contains_key(&name) {
            return Err(ModelError::DuplicateConstraint(name));
        }
        expr.compact();
        if let Some(&(v, _)) = expr.terms.iter().find(|(v, _)| v.0 >= self.variables.len()) {
            return Err(ModelError::UnknownVariable {
                constraint: name,
                index: v.0,
            });
        }
        if !rhs.is_finite() || !expr.constant.is_finite() {
            return Err(ModelError::NonFinite(name));
        }
        let id = ConstrId(self.constraints.len());
        self.constraint_names.insert(name.clone(), id);
        self.constraints.push(Constraint {
            name,
            terms: expr.terms,
            sense,
            rhs: rhs - expr.constant,
        });
        Ok(id)
    }

    /// Name-based variant of [`Model::add_constraint`].
    pub fn add_constraint_named(
        &mut self,
        name: impl Into<String>,
        terms: &[(&str, f64)],
        sense: Sense,
        rhs: f64,
    ) -> Result<ConstrId, ModelError> {
        let name = name.into();
        let mut expr = LinExpr::new();
        for &(var, c) in terms {
            let id = self
                .var_by_name(var)
                .ok_or_else(|| ModelError::UndeclaredVariable {
                    constraint: name.clone(),
                    variable: var.to_string(),
                })?;
            expr.add_term(id, c);
        }
        self.add_constraint(name, expr, sense, rhs)
    }

    pub fn add_linear_cost(&mut self, v: VarId, c: f64) {
        if c != 0.0 {
            self.objective.linear.push((v, c));
        }
    }

    pub fn add_cost_expr(&mut self, expr: &LinExpr, scale: f64) {
        for &(v, c) in &expr.terms {
            self.add_linear_cost(v, c * scale);
        }
        self.objective.constant += expr.constant * scale;
    }

    /// Adds `c * x_i * x_j` to the objective.
    pub fn add_quadratic_cost(&mut self, i: VarId, j: VarId, c: f64) {
        if c != 0.0 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.objective.quadratic.push((a, b, c));
        }
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.objective.constant += c;
    }

    pub fn set_bounds(&mut self, v: VarId, lower: f64, upper: f64) -> Result<(), ModelError> {
        let var = self
            .variables
            .get_mut(v.0)
            .ok_or(ModelError::UnknownVariable {
                constraint: String::from("<bounds>"),
                index: v.0,
            })?;
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(ModelError::InvalidBounds {
                name: var.name.clone(),
                lower,
                upper,
            });
        }
        var.lower = lower;
        var.upper = upper;
        Ok(())
    }

    /// Marks a row as lazy. Lazy rows belong to the model like any other;
    /// branch and bound only adds them to a relaxation once it violates them.
    pub fn set_lazy(&mut self, c: ConstrId) -> Result<(), ModelError> {
        if c.0 >= self.constraints.len() {
            return Err(ModelError::UnknownConstraint(c.0));
        }
        self.lazy.insert(c);
        Ok(())
    }

    pub fn is_lazy(&self, c: ConstrId) -> bool {
        self.lazy.contains(&c)
    }

    pub fn num_lazy(&self) -> usize {
        self.lazy.len()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, v: VarId) -> &Variable {
        &self.variables[v.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries().count()
    }

    /// Largest constraint or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Largest distance of a binary variable from {0, 1}.
    pub fn max_integrality_violation(&self, x: &[f64]) -> f64 {
        self.binaries()
            .map(|v| {
                let xi = x[v.0];
                (xi - xi.round()).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Checks the structural invariants: references, binary bounds and
    /// positive semidefiniteness of the quadratic objective.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        for v in &self.variables {
            if v.lower > v.upper {
                return Err(ModelError::InvalidBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(ModelError::InvalidBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        for c in &self.constraints {
            if let Some(&(v, _)) = c.terms.iter().find(|(v, _)| v.0 >= n) {
                return Err(ModelError::UnknownVariable {
                    constraint: c.name.clone(),
                    index: v.0,
                });
            }
        }
        let obj_refs = self
            .objective
            .linear
            .iter()
            .map(|t| t.0)
            .chain(self.objective.quadratic.iter().flat_map(|t| [t.0, t.1]));
        for v in obj_refs {
            if v.0 >= n {
                return Err(ModelError::UnknownVariable {
                    constraint: String::from("<objective>"),
                    index: v.0,
                });
            }
        }
        self.check_convex()
    }

    fn check_convex(&self) -> Result<(), ModelError> {
        if self.objective.is_separable() {
            let mut diag: HashMap<VarId, f64> = HashMap::new();
            for &(i, _, c) in &self.objective.quadratic {
                *diag.entry(i).or_default() += c;
            }
            if let Some((v, c)) = diag.into_iter().find(|&(_, c)| c < 0.0) {
                return Err(ModelError::NotConvex(format!(
                    "negative curvature {c} on {}",
                    self.variables[v.0].name
                )));
            }
            return Ok(());
        }
        // dense check on the variables touched by quadratic terms
        let mut index: Vec<VarId> = self
            .objective
            .quadratic
            .iter()
            .flat_map(|&(i, j, _)| [i, j])
            .collect();
        index.sort();
        index.dedup();
        let pos: HashMap<VarId, usize> = index.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let k = index.len();
        let mut q = DMatrix::<f64>::zeros(k, k);
        for &(i, j, c) in &self.objective.quadratic {
            let (a, b) = (pos[&i], pos[&j]);
            if a == b {
                q[(a, a)] += c;
            } else {
                q[(a, b)] += 0.5 * c;
                q[(b, a)] += 0.5 * c;
            }
        }
        let scale = q.amax().max(1.0);
        let min_eig = SymmetricEigen::new(q).eigenvalues.min();
        if min_eig < -1e-9 * scale {
            return Err(ModelError::NotConvex(format!(
                "quadratic form has eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(())
    }

    pub(crate) fn objective_mut(&mut self) -> &mut Objective {
        &mut self.objective
    }
}
