//! Quadratic-penalty reformulation: every constraint residual `r` is moved
//! into the cost as `(1/eps) |r|^2`, leaving an unconstrained problem that
//! the plain Riccati path solves.

use nalgebra::DVector;

use crate::error::{ProblemError, SolveError};
use crate::problem::{LqrProblem, StageConstraint, TerminalConstraint};
use crate::solver::{solve, stage_residuals, SolverOptions, Trajectory};

/// Returns the unconstrained problem whose costs carry the penalty
/// `(1/eps) |Gx x + Gu u + g|^2` up to the constant `(1/eps) |g|^2`.
///
/// Under the half-quadratic cost convention this adds `(2/eps) G'G` to the
/// quadratic blocks and `(2/eps) G'g` to the linear terms.
pub fn penalize(problem: &LqrProblem, eps: f64) -> Result<LqrProblem, ProblemError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ProblemError::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let w = 2.0 / eps;
    let mut out = problem.clone();
    for (cost, con) in out.stage_costs.iter_mut().zip(&problem.stage_constraints) {
        if con.is_empty() {
            continue;
        }
        let (gx, gu, g) = (&con.state_map, &con.control_map, &con.offset);
        cost.state_weight += gx.tr_mul(gx) * w;
        cost.control_weight += gu.tr_mul(gu) * w;
        cost.cross_weight += gu.tr_mul(gx) * w;
        cost.state_linear += gx.tr_mul(g) * w;
        cost.control_linear += gu.tr_mul(g) * w;
    }
    let con = &problem.terminal_constraint;
    if !con.is_empty() {
        out.terminal_cost.state_weight += con.state_map.tr_mul(&con.state_map) * w;
        out.terminal_cost.state_linear += con.state_map.tr_mul(&con.offset) * w;
    }
    out.stage_constraints = vec![StageConstraint::none(problem.n, problem.m); problem.horizon];
    out.terminal_constraint = TerminalConstraint::none(problem.n);
    Ok(out)
}

/// `cost + (1/eps) * sum |residual|^2`, evaluated against the original
/// constraints.
pub fn penalized_objective(problem: &LqrProblem, trajectory: &Trajectory, eps: f64) -> f64 {
    let residuals = stage_residuals(problem, &trajectory.states, &trajectory.controls);
    trajectory.objective + residuals.iter().map(|r| r.norm_squared()).sum::<f64>() / eps
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyPoint {
    pub eps: f64,
    /// Trajectory of the penalized problem; its `objective` is the original
    /// cost and its residuals are against the original constraints.
    pub trajectory: Trajectory,
    /// `max_t |x_t(eps) - x_t(constrained)|_inf`.
    pub gap_to_constrained: f64,
    pub penalized_objective: f64,
}

fn state_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Solves the penalized problem for each `eps` and measures the state
/// trajectory gap to the exactly constrained solution.
pub fn penalty_sweep(
    problem: &LqrProblem,
    eps_list: &[f64],
    options: &SolverOptions,
) -> Result<Vec<PenaltyPoint>, SolveError> {
    if eps_list.is_empty() {
        return Err(SolveError::InvalidOptions("eps list is empty".into()));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(SolveError::InvalidOptions("eps values must be positive".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SolveError::InvalidOptions(
            "eps list must be strictly decreasing".into(),
        ));
    }
    let reference = solve(problem, options)?.trajectory;
    eps_list
        .iter()
        .map(|&eps| {
            let penalized = penalize(problem, eps).map_err(|e| SolveError::InvalidOptions(e.to_string()))?;
            let sol = solve(&penalized, options)?;
            let trajectory =
                crate::solver::evaluate_trajectory(problem, sol.trajectory.states, sol.trajectory.controls);
            Ok(PenaltyPoint {
                eps,
                gap_to_constrained: state_gap(&trajectory.states, &reference.states),
                penalized_objective: penalized_objective(problem, &trajectory, eps),
                trajectory,
            })
        })
        .collect()
}
