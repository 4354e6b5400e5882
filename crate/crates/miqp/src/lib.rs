//! Small convex mixed-binary quadratic programming toolkit: a model
//! container, continuous relaxations backed by an interior point solver, a
//! best-bound branch and bound, piecewise linearisation and MPS I/O.

mod bnb;
mod error;
mod linearize;
mod model;
mod mps;
mod relax;
mod solution;

pub use bnb::{branch_and_bound, branch_and_bound_logged, BranchAndBoundResult, BranchOptions, NodeRecord};
pub use error::{ModelError, MpsError, SolveError};
pub use linearize::linearize_objective;
pub use model::{ConstrId, Constraint, LinExpr, Model, Objective, Sense, VarId, VarKind, Variable};
pub use mps::{export_mps, parse_mps, read_mps, write_mps};
pub use relax::{solve_relaxation, Fixings, Relaxation, RelaxationOptions};
pub use solution::{relative_gap, MipSolution, SolveStatus};
