//! Constraint-aware Riccati recursion.
//!
//! The backward pass carries two functions of the state from stage `t+1`
//! to stage `t`: a quadratic cost-to-go `1/2 x'V x + v'x` and a linear
//! constraint-to-go `H x + h = 0` describing the states from which the
//! remaining constraints can still be met. At each stage the control is
//! split into a component in the row space of the combined constraint
//! map `N_u`, chosen to drive the constraint residual to its least-squares
//! minimum, and a component in the null space of `N_u`, chosen to minimize
//! cost. Whatever part of the residual the control cannot reach becomes the
//! constraint-to-go for the preceding stage.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;
use crate::kernels::{
    compress_rows_with_reference, range_null_decompose_with_reference, rank_with_reference, DEFAULT_RANK_TOL,
};
use crate::problem::{symmetric_part, LqrProblem};

pub const DEFAULT_FEAS_TOL: f64 = 1e-7;

/// Smallest admissible `min(diag L)^2 / max(diag L)^2` for the Cholesky
/// factor of the null-space Hessian before it is treated as singular.
const NULL_HESSIAN_COND_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance for every rank decision.
    pub rank_tol: f64,
    /// Stage-0 feasibility tolerance, scaled by `1 + |x_init|`.
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            feas_tol: DEFAULT_FEAS_TOL,
        }
    }
}

/// `1/2 x' quadratic x + linear' x` (constant term not tracked).
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGo {
    pub quadratic: DMatrix<f64>,
    pub linear: DVector<f64>,
}

/// `state_map x + offset = 0`; rows of `[state_map | offset]` are
/// orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintToGo {
    pub state_map: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ConstraintToGo {
    pub fn rows(&self) -> usize {
        self.offset.len()
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x + &self.offset
    }

    /// `[state_map | offset]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (p, n) = self.state_map.shape();
        let mut out = DMatrix::zeros(p, n + 1);
        out.view_mut((0, 0), (p, n)).copy_from(&self.state_map);
        out.set_column(n, &self.offset);
        out
    }
}

/// Affine feedback `u = gain x + feedforward`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    pub gain: DMatrix<f64>,
    pub feedforward: DVector<f64>,
}

impl FeedbackPolicy {
    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.feedforward
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// One policy per control stage `0..T`.
    pub policies: Vec<FeedbackPolicy>,
    /// Indexed by stage `0..=T`.
    pub cost_to_go: Vec<CostToGo>,
    /// Indexed by stage `0..=T`.
    pub constraint_to_go: Vec<ConstraintToGo>,
    /// Orthonormal basis of the null space of the combined constraint map
    /// on `u_t`, per control stage. Controls moved along these directions
    /// leave every downstream constraint reachable.
    pub control_null_bases: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `T + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `T` controls.
    pub controls: Vec<DVector<f64>>,
    pub objective: f64,
    /// Infinity norm over every stage and terminal constraint residual.
    pub max_constraint_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub policies: Vec<FeedbackPolicy>,
    pub cost_to_go: Vec<CostToGo>,
    pub constraint_to_go: Vec<ConstraintToGo>,
}

/// Coefficients of the one-stage problem after eliminating `x[t+1]`.
struct StageWork {
    m_x: DVector<f64>,
    m_u: DVector<f64>,
    m_xx: DMatrix<f64>,
    m_uu: DMatrix<f64>,
    m_ux: DMatrix<f64>,
    n_x: DMatrix<f64>,
    n_u: DMatrix<f64>,
    n_1: DVector<f64>,
    /// Scale of the operands that formed `n_u`.
    n_u_reference: f64,
    /// Scale of the operands that formed `[n_x | n_1]`.
    n_x_reference: f64,
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

fn vstack_vec(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

fn assemble_stage(problem: &LqrProblem, t: usize, next_cost: &CostToGo, next_con: &ConstraintToGo) -> StageWork {
    let cost = &problem.stage_costs[t];
    let dynamics = &problem.dynamics[t];
    let con = &problem.stage_constraints[t];
    let (fx, fu, f1) = (&dynamics.state_map, &dynamics.control_map, &dynamics.drift);
    let (v_xx, v_x) = (&next_cost.quadratic, &next_cost.linear);
    let (h_x, h_1) = (&next_con.state_map, &next_con.offset);

    // Gradient of the next cost-to-go at the drift point.
    let v_shift = v_x + v_xx * f1;
    let v_fx = v_xx * fx;
    let v_fu = v_xx * fu;

    let n_x_reference = {
        let g = con.state_map.norm_squared() + con.offset.norm_squared();
        let h = h_x.norm() * (fx.norm() + f1.norm()) + h_1.norm();
        g.sqrt().max(h)
    };
    let n_u_reference = con.control_map.norm().max(h_x.norm() * fu.norm());

    StageWork {
        m_x: &cost.state_linear + fx.tr_mul(&v_shift),
        m_u: &cost.control_linear + fu.tr_mul(&v_shift),
        m_xx: &cost.state_weight + fx.tr_mul(&v_fx),
        m_uu: &cost.control_weight + fu.tr_mul(&v_fu),
        m_ux: &cost.cross_weight + fu.tr_mul(&v_fx),
        n_x: vstack(&con.state_map, &(h_x * fx)),
        n_u: vstack(&con.control_map, &(h_x * fu)),
        n_1: vstack_vec(&con.offset, &(h_x * f1 + h_1)),
        n_u_reference,
        n_x_reference,
    }
}

/// Compresses `[H | h]` to independent rows and certifies that some state
/// satisfies it.
fn settle_constraint(
    stacked: &DMatrix<f64>,
    n: usize,
    reference: f64,
    stage: usize,
    options: &SolverOptions,
) -> Result<ConstraintToGo, SolveError> {
    let compressed = compress_rows_with_reference(stacked, options.rank_tol, reference)?;
    let rows = compressed.nrows();
    let state_map = compressed.columns(0, n).into_owned();
    let offset = compressed.column(n).into_owned();
    if rows > 0 {
        // Rows are orthonormal, so unit scale is the natural reference.
        let map_rank = rank_with_reference(&state_map, options.rank_tol, 1.0)?;
        if map_rank < rows {
            return Err(SolveError::Infeasible { stage });
        }
    }
    Ok(ConstraintToGo { state_map, offset })
}

fn check_options(options: &SolverOptions) -> Result<(), SolveError> {
    let ok = |v: f64| v > 0.0 && v.is_finite();
    if ok(options.rank_tol) && ok(options.feas_tol) {
        Ok(())
    } else {
        Err(SolveError::InvalidOptions(format!(
            "tolerances must be positive and finite (rank_tol = {}, feas_tol = {})",
            options.rank_tol, options.feas_tol
        )))
    }
}

/// Runs the backward recursion from `T` down to `0`.
///
/// Fails with [`SolveError::Infeasible`] at the first stage (counting
/// backwards) whose constraint-to-go admits no state, or at stage 0 when
/// `x_init` violates the stage-0 constraint-to-go.
pub fn backward_pass(problem: &LqrProblem, options: &SolverOptions) -> Result<BackwardPass, SolveError> {
    check_options(options)?;
    let report = problem.validate();
    if !report.is_empty() {
        return Err(SolveError::InvalidProblem(report));
    }
    let (n, m, horizon) = (problem.n, problem.m, problem.horizon);

    let mut cost_to_go = Vec::with_capacity(horizon + 1);
    let mut constraint_to_go = Vec::with_capacity(horizon + 1);
    let mut policies = Vec::with_capacity(horizon);
    let mut null_bases = Vec::with_capacity(horizon);

    let terminal = &problem.terminal_constraint;
    let mut stacked = DMatrix::zeros(terminal.rows(), n + 1);
    stacked
        .view_mut((0, 0), (terminal.rows(), n))
        .copy_from(&terminal.state_map);
    stacked.set_column(n, &terminal.offset);
    let mut next_con = settle_constraint(&stacked, n, 0.0, horizon, options)?;
    let mut next_cost = CostToGo {
        quadratic: problem.terminal_cost.state_weight.clone(),
        linear: problem.terminal_cost.state_linear.clone(),
    };

    for t in (0..horizon).rev() {
        let w = assemble_stage(problem, t, &next_cost, &next_con);
        let split = range_null_decompose_with_reference(&w.n_u, options.rank_tol, w.n_u_reference)?;

        let mut gain = DMatrix::zeros(m, n);
        let mut feedforward = DVector::zeros(m);

        if split.rank > 0 {
            // y* = -(N_u P)^+ (N_x x + n_1)
            let pinv = split.range_pseudo_inverse();
            gain -= &split.range_basis * (&pinv * &w.n_x);
            feedforward -= &split.range_basis * (&pinv * &w.n_1);
        }
        if split.nullity() > 0 {
            // w* = -(Z' M_uu Z)^-1 Z' (M_ux x + m_u + M_uu P y*), with the
            // range-space part already in gain and feedforward.
            let z = &split.null_basis;
            let reduced = symmetric_part(&z.tr_mul(&(&w.m_uu * z)));
            let chol = reduced.cholesky().ok_or_else(|| SolveError::IllPosed {
                stage: t,
                detail: "null-space Hessian is not positive definite".into(),
            })?;
            let diag = chol.l_dirty().diagonal().map(|d| d * d);
            if diag.min() <= NULL_HESSIAN_COND_FLOOR * diag.max() {
                return Err(SolveError::IllPosed {
                    stage: t,
                    detail: "null-space Hessian is numerically singular".into(),
                });
            }
            let coupled_x = &w.m_ux + &w.m_uu * &gain;
            let coupled_1 = &w.m_u + &w.m_uu * &feedforward;
            gain -= z * chol.solve(&z.tr_mul(&coupled_x));
            feedforward -= z * chol.solve(&z.tr_mul(&coupled_1));
        }

        // Residual left after the control's best effort, as a function of x.
        let mut residual = DMatrix::zeros(w.n_x.nrows(), n + 1);
        residual.view_mut((0, 0), w.n_x.shape()).copy_from(&w.n_x);
        residual.set_column(n, &w.n_1);
        let projected = split.project_out_range(&residual);
        let con = settle_constraint(&projected, n, w.n_x_reference, t, options)?;

        let kt_muu = gain.tr_mul(&w.m_uu);
        let cross = w.m_ux.tr_mul(&gain);
        let quadratic = &w.m_xx + &cross + cross.transpose() + &kt_muu * &gain;
        let linear = &w.m_x + gain.tr_mul(&w.m_u) + (w.m_ux.transpose() + &kt_muu) * &feedforward;

        constraint_to_go.push(std::mem::replace(&mut next_con, con));
        cost_to_go.push(std::mem::replace(
            &mut next_cost,
            CostToGo {
                quadratic: symmetric_part(&quadratic),
                linear,
            },
        ));
        policies.push(FeedbackPolicy { gain, feedforward });
        null_bases.push(split.null_basis);
    }

    if next_con.rows() > 0 {
        let res = next_con.residual(&problem.x_init).amax();
        if res > options.feas_tol * (1.0 + problem.x_init.norm()) {
            return Err(SolveError::Infeasible { stage: 0 });
        }
    }
    constraint_to_go.push(next_con);
    cost_to_go.push(next_cost);

    policies.reverse();
    cost_to_go.reverse();
    constraint_to_go.reverse();
    null_bases.reverse();
    Ok(BackwardPass {
        policies,
        cost_to_go,
        constraint_to_go,
        control_null_bases: null_bases,
    })
}

/// Objective `sum cost_t(x_t, u_t) + cost_T(x_T)`.
pub fn evaluate_objective(problem: &LqrProblem, states: &[DVector<f64>], controls: &[DVector<f64>]) -> f64 {
    let stage: f64 = problem
        .stage_costs
        .iter()
        .zip(states.iter().zip(controls))
        .map(|(c, (x, u))| c.evaluate(x, u))
        .sum();
    stage + problem.terminal_cost.evaluate(&states[problem.horizon])
}

/// Residual vectors per stage `0..=T` (the last entry is the terminal
/// constraint). Unconstrained stages yield empty vectors.
pub fn stage_residuals(problem: &LqrProblem, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = problem
        .stage_constraints
        .iter()
        .zip(states.iter().zip(controls))
        .map(|(c, (x, u))| c.residual(x, u))
        .collect();
    out.push(problem.terminal_constraint.residual(&states[problem.horizon]));
    out
}

pub fn constraint_residuals(problem: &LqrProblem, trajectory: &Trajectory) -> Vec<DVector<f64>> {
    stage_residuals(problem, &trajectory.states, &trajectory.controls)
}

pub(crate) fn max_abs(residuals: &[DVector<f64>]) -> f64 {
    residuals
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| r.amax())
        .fold(0.0, f64::max)
}

/// Builds a [`Trajectory`] from given states and controls, evaluating the
/// objective and constraint residuals.
pub fn evaluate_trajectory(problem: &LqrProblem, states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Trajectory {
    let objective = evaluate_objective(problem, &states, &controls);
    let max_constraint_residual = max_abs(&stage_residuals(problem, &states, &controls));
    Trajectory {
        states,
        controls,
        objective,
        max_constraint_residual,
    }
}

pub(crate) fn check_policies(problem: &LqrProblem, policies: &[FeedbackPolicy]) -> Result<(), SolveError> {
    if policies.len() != problem.horizon {
        return Err(SolveError::DimensionMismatch(format!(
            "{} policies for horizon {}",
            policies.len(),
            problem.horizon
        )));
    }
    if let Some(t) = policies
        .iter()
        .position(|p| p.gain.shape() != (problem.m, problem.n) || p.feedforward.len() != problem.m)
    {
        return Err(SolveError::DimensionMismatch(format!(
            "policy at stage {t} has the wrong shape"
        )));
    }
    if problem.x_init.len() != problem.n || problem.dynamics.len() != problem.horizon {
        return Err(SolveError::DimensionMismatch(
            "problem data does not match n and T".into(),
        ));
    }
    Ok(())
}

/// Simulates the policies from `x_init` through the nominal dynamics.
pub fn forward_rollout(problem: &LqrProblem, policies: &[FeedbackPolicy]) -> Result<Trajectory, SolveError> {
    check_policies(problem, policies)?;
    let mut states = Vec::with_capacity(problem.horizon + 1);
    let mut controls = Vec::with_capacity(problem.horizon);
    let mut x = problem.x_init.clone();
    for (policy, dynamics) in policies.iter().zip(&problem.dynamics) {
        let u = policy.control(&x);
        let next = dynamics.step(&x, &u);
        states.push(x);
        controls.push(u);
        x = next;
    }
    states.push(x);
    Ok(evaluate_trajectory(problem, states, controls))
}

pub fn solve(problem: &LqrProblem, options: &SolverOptions) -> Result<Solution, SolveError> {
    let pass = backward_pass(problem, options)?;
    let trajectory = forward_rollout(problem, &pass.policies)?;
    Ok(Solution {
        trajectory,
        policies: pass.policies,
        cost_to_go: pass.cost_to_go,
        constraint_to_go: pass.constraint_to_go,
    })
}
