//! Receding-horizon planner: the latent MPC problem with gains frozen at `k = 0`,
//! condensed to a box-constrained QP over the planned actions and solved by
//! accelerated projected gradient.

mod condense;
mod planner;
mod solver;

pub use condense::{condense, lambda_power, CondensedQP, PlanConfig};
pub use planner::{plan, PlanOutcome, Planner};
pub use solver::{kkt_residual, solve_box_qp, QpSolution, SolverOptions};

#[cfg(test)]
mod tests;
