#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Node, time or iteration budget exhausted; `values` holds the best
    /// incumbent if one exists.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: SolveStatus,
    /// One entry per model variable (empty when no point is available).
    pub values: Vec<f64>,
    pub objective: f64,
    /// Best proven lower bound.
    pub best_bound: f64,
    /// Relative gap between `objective` and `best_bound`.
    pub gap: f64,
    pub nodes: usize,
    /// Scaled KKT residual of the final continuous solve (infinite when
    /// there is no point).
    pub kkt_residual: f64,
}

impl MipSolution {
    pub(crate) fn optimal(values: Vec<f64>, objective: f64, kkt_residual: f64) -> Self {
        Self {
            status: SolveStatus::Optimal,
            values,
            objective,
            best_bound: objective,
            gap: 0.0,
            nodes: 1,
            kkt_residual,
        }
    }

    pub(crate) fn infeasible() -> Self {
        Self {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            best_bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes: 1,
            kkt_residual: f64::INFINITY,
        }
    }

    pub(crate) fn unbounded() -> Self {
        Self {
            status: SolveStatus::Unbounded,
            values: Vec::new(),
            objective: f64::NEG_INFINITY,
            best_bound: f64::NEG_INFINITY,
            gap: f64::INFINITY,
            nodes: 1,
            kkt_residual: f64::INFINITY,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn has_point(&self) -> bool {
        !self.values.is_empty()
    }
}

/// `(incumbent - bound) / max(|incumbent|, 1)`
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}
