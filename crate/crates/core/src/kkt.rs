//! Direct solution of the first-order optimality conditions as one dense
//! linear system.
//!
//! Variables are ordered stage by stage so the matrix is banded:
//!
//! ```text
//! nu_0, x_0, u_0, mu_0, nu_1, x_1, u_1, mu_1, ..., nu_T, x_T, mu_T
//! ```
//!
//! where `nu_t` multiplies the equation that defines `x_t` (the initial
//! condition for `t = 0`, the dynamics from `t - 1` otherwise) and `mu_t`
//! multiplies the auxiliary constraint at stage `t`. The factorization is
//! dense: this module is a reference solver, not a fast one.

use faer::linalg::solvers::Solve;
use faer::MatRef;
use nalgebra::{DMatrix, DVector};

use crate::error::KktError;
use crate::problem::LqrProblem;
use crate::solver::{evaluate_trajectory, Trajectory};

/// Pivot ratio `min |U_ii| / max |U_ii|` below which an LU factor is
/// treated as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;
/// Relative tolerance for dropping dependent constraint rows.
const ROW_RANK_TOL: f64 = 1e-10;
/// Constraint residual above which a reduced solution certifies
/// inconsistency, scaled by `1 + |b|_inf`.
pub const INFEASIBLE_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariableKind {
    State,
    Control,
    /// Multiplier of the equation defining `x_t`.
    DynamicsMultiplier,
    /// Multiplier of the auxiliary constraint at stage `t`.
    ConstraintMultiplier,
}

/// Row offsets of every variable block.
#[derive(Debug, Clone, PartialEq)]
pub struct KktIndex {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    state: Vec<usize>,
    control: Vec<usize>,
    dyn_mult: Vec<usize>,
    con_mult: Vec<usize>,
    con_rows: Vec<usize>,
    dim: usize,
}

impl KktIndex {
    fn new(problem: &LqrProblem) -> Self {
        let (n, m, horizon) = (problem.n, problem.m, problem.horizon);
        let con_rows: Vec<usize> = problem
            .stage_constraints
            .iter()
            .map(|c| c.rows())
            .chain(std::iter::once(problem.terminal_constraint.rows()))
            .collect();
        let mut state = Vec::with_capacity(horizon + 1);
        let mut control = Vec::with_capacity(horizon);
        let mut dyn_mult = Vec::with_capacity(horizon + 1);
        let mut con_mult = Vec::with_capacity(horizon + 1);
        let mut at = 0;
        for (t, rows) in con_rows.iter().enumerate() {
            dyn_mult.push(at);
            at += n;
            state.push(at);
            at += n;
            if t < horizon {
                control.push(at);
                at += m;
            }
            con_mult.push(at);
            at += rows;
        }
        Self {
            n,
            m,
            horizon,
            state,
            control,
            dyn_mult,
            con_mult,
            con_rows,
            dim: at,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row of component `component` of the given block, if it exists.
    pub fn index(&self, kind: VariableKind, stage: usize, component: usize) -> Option<usize> {
        let (starts, width) = match kind {
            VariableKind::State => (&self.state, self.n),
            VariableKind::Control => (&self.control, self.m),
            VariableKind::DynamicsMultiplier => (&self.dyn_mult, self.n),
            VariableKind::ConstraintMultiplier => (&self.con_mult, *self.con_rows.get(stage)?),
        };
        let start = *starts.get(stage)?;
        (component < width).then_some(start + component)
    }

    /// Number of multiplier rows (initial condition, dynamics, auxiliary).
    pub fn multiplier_count(&self) -> usize {
        (self.horizon + 1) * self.n + self.con_rows.iter().sum::<usize>()
    }

    fn is_multiplier(&self, row: usize) -> bool {
        let in_block = |starts: &[usize], widths: &dyn Fn(usize) -> usize| {
            starts.iter().enumerate().any(|(t, &s)| row >= s && row < s + widths(t))
        };
        in_block(&self.dyn_mult, &|_| self.n) || in_block(&self.con_mult, &|t| self.con_rows[t])
    }
}

#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub index: KktIndex,
}

impl KktSystem {
    /// Largest `|i - j|` over the nonzero entries.
    pub fn bandwidth(&self) -> usize {
        let mut band = 0;
        for j in 0..self.matrix.ncols() {
            for i in 0..self.matrix.nrows() {
                if self.matrix[(i, j)] != 0.0 {
                    band = band.max(i.abs_diff(j));
                }
            }
        }
        band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktMultipliers {
    /// Per stage `0..=T`: the initial-condition multiplier at 0, the
    /// multiplier of the dynamics from `t - 1` otherwise.
    pub dynamics: Vec<DVector<f64>>,
    /// Per stage `0..=T`, terminal last. Rows dropped as linearly
    /// dependent carry zero.
    pub constraints: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub trajectory: Trajectory,
    pub multipliers: KktMultipliers,
}

fn put(k: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    k.view_mut((row, col), block.shape()).copy_from(block);
    k.view_mut((col, row), (block.ncols(), block.nrows()))
        .copy_from(&block.transpose());
}

/// Builds the symmetric KKT matrix and right-hand side
/// `[[H, A'], [A, 0]] [z; lambda] = [-c; b]` with `x_0` fixed by an explicit
/// constraint block.
pub fn assemble_kkt(problem: &LqrProblem) -> Result<KktSystem, KktError> {
    let report = problem.validate();
    if !report.is_empty() {
        return Err(KktError::InvalidProblem(report));
    }
    let index = KktIndex::new(problem);
    let (n, horizon) = (problem.n, problem.horizon);
    let d = index.dim;
    let mut k = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    let eye = DMatrix::<f64>::identity(n, n);

    let nu0 = index.dyn_mult[0];
    put(&mut k, nu0, index.state[0], &eye);
    rhs.rows_mut(nu0, n).copy_from(&problem.x_init);

    for t in 0..horizon {
        let (xs, us, ms) = (index.state[t], index.control[t], index.con_mult[t]);
        let cost = &problem.stage_costs[t];
        k.view_mut((xs, xs), (n, n)).copy_from(&cost.state_weight);
        k.view_mut((us, us), cost.control_weight.shape())
            .copy_from(&cost.control_weight);
        put(&mut k, us, xs, &cost.cross_weight);
        rhs.rows_mut(xs, n).copy_from(&(-&cost.state_linear));
        rhs.rows_mut(us, problem.m).copy_from(&(-&cost.control_linear));

        let con = &problem.stage_constraints[t];
        if !con.is_empty() {
            put(&mut k, ms, xs, &con.state_map);
            put(&mut k, ms, us, &con.control_map);
            rhs.rows_mut(ms, con.rows()).copy_from(&(-&con.offset));
        }

        let dynamics = &problem.dynamics[t];
        let nu = index.dyn_mult[t + 1];
        put(&mut k, nu, index.state[t + 1], &eye);
        put(&mut k, nu, xs, &(-&dynamics.state_map));
        put(&mut k, nu, us, &(-&dynamics.control_map));
        rhs.rows_mut(nu, n).copy_from(&dynamics.drift);
    }

    let xs = index.state[horizon];
    k.view_mut((xs, xs), (n, n))
        .copy_from(&problem.terminal_cost.state_weight);
    rhs.rows_mut(xs, n).copy_from(&(-&problem.terminal_cost.state_linear));
    let con = &problem.terminal_constraint;
    if !con.is_empty() {
        let ms = index.con_mult[horizon];
        put(&mut k, ms, xs, &con.state_map);
        rhs.rows_mut(ms, con.rows()).copy_from(&(-&con.offset));
    }

    Ok(KktSystem { matrix: k, rhs, index })
}

/// LU solve of a square system; `None` when the factor is numerically
/// singular.
fn lu_solve(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let d = matrix.nrows();
    let view = MatRef::from_column_major_slice(matrix.as_slice(), d, d);
    let lu = view.partial_piv_lu();
    let u = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..d {
        let p = u[(i, i)].abs();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if d > 0 && (lo.is_nan() || lo <= SINGULAR_PIVOT_RATIO * hi) {
        return None;
    }
    let b = faer::Mat::from_fn(d, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let sol = DVector::from_fn(d, |i, _| x[(i, 0)]);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

fn residual_ok(matrix: &DMatrix<f64>, rhs: &DVector<f64>, sol: &DVector<f64>) -> bool {
    let r = matrix * sol - rhs;
    r.amax() <= 1e-9 * (matrix.amax() * sol.amax() + rhs.amax()).max(1.0)
}

/// Indices of a maximal independent subset of the rows of `a`, found by
/// column-pivoted QR of `a'`.
fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let (rows, cols) = a.shape();
    if rows == 0 {
        return Vec::new();
    }
    let at = faer::Mat::from_fn(cols, rows, |i, j| a[(j, i)]);
    let qr = at.col_piv_qr();
    let r = qr.R();
    let size = rows.min(cols);
    let top = if size > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..size).take_while(|&i| r[(i, i)].abs() > ROW_RANK_TOL * top).count();
    let (fwd, _) = qr.P().arrays();
    let mut keep: Vec<usize> = fwd[..rank].to_vec();
    keep.sort_unstable();
    keep
}

fn extract(index: &KktIndex, problem: &LqrProblem, sol: &DVector<f64>) -> KktSolution {
    let (n, m, horizon) = (problem.n, problem.m, problem.horizon);
    let states = (0..=horizon)
        .map(|t| sol.rows(index.state[t], n).into_owned())
        .collect();
    let controls = (0..horizon)
        .map(|t| sol.rows(index.control[t], m).into_owned())
        .collect();
    let dynamics = (0..=horizon)
        .map(|t| sol.rows(index.dyn_mult[t], n).into_owned())
        .collect();
    let constraints = (0..=horizon)
        .map(|t| sol.rows(index.con_mult[t], index.con_rows[t]).into_owned())
        .collect();
    KktSolution {
        trajectory: evaluate_trajectory(problem, states, controls),
        multipliers: KktMultipliers { dynamics, constraints },
    }
}

/// Solves an assembled system.
///
/// A plain LU solve is tried first. If the matrix is singular, dependent
/// constraint rows are dropped and the reduced system is solved; the
/// dropped rows then either hold at the solution (redundant constraints)
/// or certify an inconsistent problem. A singular reduced system means the
/// minimizer is not unique.
pub fn solve_system(system: &KktSystem, problem: &LqrProblem) -> Result<KktSolution, KktError> {
    let KktSystem { matrix, rhs, index } = system;
    if let Some(sol) = lu_solve(matrix, rhs) {
        if residual_ok(matrix, rhs, &sol) {
            return Ok(extract(index, problem, &sol));
        }
    }

    let d = index.dim;
    let (primal, mult): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| !index.is_multiplier(i));
    let a = DMatrix::from_fn(mult.len(), primal.len(), |i, j| matrix[(mult[i], primal[j])]);
    let b = DVector::from_fn(mult.len(), |i, _| rhs[mult[i]]);
    let keep_local = independent_rows(&a);
    let mut keep: Vec<usize> = primal.clone();
    keep.extend(keep_local.iter().map(|&i| mult[i]));
    keep.sort_unstable();

    let reduced = DMatrix::from_fn(keep.len(), keep.len(), |i, j| matrix[(keep[i], keep[j])]);
    let reduced_rhs = DVector::from_fn(keep.len(), |i, _| rhs[keep[i]]);
    let sol_reduced = lu_solve(&reduced, &reduced_rhs).ok_or(KktError::IllPosed)?;
    if !residual_ok(&reduced, &reduced_rhs, &sol_reduced) {
        return Err(KktError::IllPosed);
    }
    let mut sol = DVector::zeros(d);
    for (i, &row) in keep.iter().enumerate() {
        sol[row] = sol_reduced[i];
    }
    let z = DVector::from_fn(primal.len(), |i, _| sol[primal[i]]);
    let violation = (&a * z - &b).amax();
    if violation > INFEASIBLE_RESIDUAL * (1.0 + b.amax()) {
        return Err(KktError::Infeasible { residual: violation });
    }
    Ok(extract(index, problem, &sol))
}

pub fn solve_kkt(problem: &LqrProblem) -> Result<KktSolution, KktError> {
    let system = assemble_kkt(problem)?;
    solve_system(&system, problem)
}

/// Infinity norm of the Lagrangian gradient at the given primal point with
/// the given multipliers.
pub fn stationarity_residual(problem: &LqrProblem, trajectory: &Trajectory, multipliers: &KktMultipliers) -> f64 {
    let (n, horizon) = (problem.n, problem.horizon);
    let mut worst = 0.0f64;
    for t in 0..=horizon {
        let x = &trajectory.states[t];
        let nu = &multipliers.dynamics[t];
        let mu = &multipliers.constraints[t];
        let mut gx = nu.clone();
        if t < horizon {
            let c = &problem.stage_costs[t];
            let u = &trajectory.controls[t];
            let d = &problem.dynamics[t];
            let g = &problem.stage_constraints[t];
            let nu_next = &multipliers.dynamics[t + 1];
            gx += &c.state_weight * x + c.cross_weight.tr_mul(u) + &c.state_linear - d.state_map.tr_mul(nu_next);
            let mut gu =
                &c.control_weight * u + &c.cross_weight * x + &c.control_linear - d.control_map.tr_mul(nu_next);
            if !g.is_empty() {
                gx += g.state_map.tr_mul(mu);
                gu += g.control_map.tr_mul(mu);
            }
            worst = worst.max(gu.amax());
        } else {
            let c = &problem.terminal_cost;
            gx += &c.state_weight * x + &c.state_linear;
            if !problem.terminal_constraint.is_empty() {
                gx += problem.terminal_constraint.state_map.tr_mul(mu);
            }
        }
        debug_assert_eq!(gx.len(), n);
        worst = worst.max(gx.amax());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{DoubleIntegrator, TerminalConstraint};
    use approx::assert_relative_eq;

    fn scalar_problem() -> LqrProblem {
        let mut p = LqrProblem::blank(1, 1, 1);
        p.dynamics[0].state_map[(0, 0)] = 1.0;
        p.dynamics[0].control_map[(0, 0)] = 1.0;
        p.stage_costs[0].state_weight[(0, 0)] = 1.0;
        p.stage_costs[0].control_weight[(0, 0)] = 1.0;
        p.terminal_cost.state_weight[(0, 0)] = 1.0;
        p.x_init[0] = 3.0;
        p
    }

    #[test]
    fn scalar_system_dimensions_and_solution() {
        let p = scalar_problem();
        let sys = assemble_kkt(&p).unwrap();
        assert_eq!(sys.index.dim(), 5);
        assert_eq!(sys.matrix, sys.matrix.transpose());
        let sol = solve_system(&sys, &p).unwrap();
        assert_relative_eq!(sol.trajectory.controls[0][0], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_has_only_dynamics_multipliers() {
        let p = scalar_problem();
        let sys = assemble_kkt(&p).unwrap();
        assert_eq!(sys.index.multiplier_count(), 2);
        assert_eq!(sys.index.index(VariableKind::ConstraintMultiplier, 0, 0), None);
        assert_eq!(sys.index.index(VariableKind::ConstraintMultiplier, 1, 0), None);
        assert_eq!(sys.index.index(VariableKind::DynamicsMultiplier, 0, 0), Some(0));
        assert_eq!(sys.index.index(VariableKind::State, 0, 0), Some(1));
        assert_eq!(sys.index.index(VariableKind::Control, 0, 0), Some(2));
        assert_eq!(sys.index.index(VariableKind::DynamicsMultiplier, 1, 0), Some(3));
        assert_eq!(sys.index.index(VariableKind::State, 1, 0), Some(4));
        assert_eq!(sys.index.index(VariableKind::Control, 1, 0), None);
    }

    #[test]
    fn double_integrator_satisfies_constraints() {
        let p = DoubleIntegrator::default().build().unwrap();
        let sol = solve_kkt(&p).unwrap();
        assert!(sol.trajectory.max_constraint_residual < 1e-8);
        let sys = assemble_kkt(&p).unwrap();
        let bound = 2 * p.n + p.m + 2;
        assert!(sys.bandwidth() <= bound, "{} > {bound}", sys.bandwidth());
        assert!(stationarity_residual(&p, &sol.trajectory, &sol.multipliers) < 1e-8);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let mut p = DoubleIntegrator::default().build().unwrap();
        p.terminal_constraint = TerminalConstraint {
            state_map: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 0.0]),
            offset: DVector::zeros(3),
        };
        let sol = solve_kkt(&p).unwrap();
        assert!(sol.trajectory.max_constraint_residual < 1e-8);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = DoubleIntegrator::default().build().unwrap();
        p.terminal_constraint = TerminalConstraint {
            state_map: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            offset: DVector::from_row_slice(&[-1.0, -2.0]),
        };
        assert!(matches!(solve_kkt(&p), Err(KktError::Infeasible { .. })));
    }

    #[test]
    fn independent_rows_picks_a_basis() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        let keep = independent_rows(&a);
        assert_eq!(keep.len(), 2);
        assert!(keep.contains(&2));
    }
}
