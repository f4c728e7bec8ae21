use super::condense::{condense, PlanConfig};
use super::solver::{solve_box_qp, QpSolution, SolverOptions};
use crate::error::Result;
use crate::koopman::{KoopmanOperator, LatentModel};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome<T> {
    /// First increment `Δa_0 = a_1 − a`.
    pub increment: Vec<T>,
    pub solution: QpSolution<T>,
}

/// One receding-horizon step: a single pass of the encoder, its action Jacobian
/// and the cost net at `(o, a)`, then condense and solve.
pub fn plan<T: Real>(
    model: &LatentModel<T>,
    op: &KoopmanOperator<T>,
    o: &[T],
    a: &[T],
    cfg: &PlanConfig<T>,
    opts: &SolverOptions,
    warm: Option<&[T]>,
) -> Result<PlanOutcome<T>> {
    let lin = model.linearize(o, a)?;
    let qp = condense(op, &lin.b0, &lin.c0, &lin.s0, a, cfg)?;
    let solution = solve_box_qp(&qp, opts, warm)?;
    if !solution.converged {
        log::warn!(
            "QP solver stopped after {} iterations with KKT residual {}",
            solution.iterations,
            solution.kkt_residual
        );
    }
    let increment = solution.v[..a.len()].iter().zip(a).map(|(&v, &x)| v - x).collect();
    Ok(PlanOutcome { increment, solution })
}

/// Planner state across the steps of one episode: the previous plan, shifted by
/// one step, warm-starts the next solve.
#[derive(Clone, Debug)]
pub struct Planner<T> {
    pub config: PlanConfig<T>,
    pub options: SolverOptions,
    previous: Option<Vec<T>>,
}

impl<T: Real> Planner<T> {
    pub fn new(config: PlanConfig<T>, options: SolverOptions) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            options,
            previous: None,
        })
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn step(&mut self, model: &LatentModel<T>, op: &KoopmanOperator<T>, o: &[T], a: &[T]) -> Result<PlanOutcome<T>> {
        let warm = self.previous.as_ref().map(|prev| {
            let m = a.len();
            let mut w = prev[m..].to_vec();
            w.extend_from_slice(&prev[prev.len() - m..]);
            w
        });
        let out = plan(model, op, o, a, &self.config, &self.options, warm.as_deref())?;
        self.previous = Some(out.solution.v.clone());
        Ok(out)
    }
}
