//! Min-norm safety filters: barrier and Lyapunov rows assembled into a small
//! QP and solved exactly at every state.

mod constraints;
mod policy;
mod qp;

pub use constraints::{clf_constraint, scbf_constraint, BarrierKind, UNCONTROLLABLE_TOL};
pub use policy::{ClfConfig, PolicyStep, SafePolicy};
pub use qp::{solve_qp, ConstraintRow, KktResiduals, QpSolution, QpSpec, RowKind, MAX_ROWS};
