//! Shared oracles and fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use clqr::generate::random_feasible;
use clqr::problem::{DoubleIntegrator, LqrProblem, StageConstraint, TerminalConstraint};
use clqr::solver::{Solution, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `max|a - b| / max(1, |b|_inf)` over every entry of two vector lists.
pub fn rel_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let scale = b.iter().map(|v| v.amax()).fold(1.0, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max) / scale
}

pub fn rel_scalar_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Worst relative disagreement in states, controls and objective.
pub fn trajectory_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    rel_gap(&a.states, &b.states)
        .max(rel_gap(&a.controls, &b.controls))
        .max(rel_scalar_gap(a.objective, b.objective))
}

/// Random feasible problem with n <= 6, m <= 3, T <= 20.
pub fn random_case(seed: u64) -> LqrProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=3);
    let horizon = rng.random_range(1..=20);
    let density = rng.random_range(0.1..0.6);
    random_feasible(&mut rng, n, m, horizon, density)
}

/// Largest absolute entry of the problem data.
pub fn data_scale(p: &LqrProblem) -> f64 {
    let mut s = p.x_init.amax();
    for c in &p.stage_costs {
        s = s
            .max(c.state_weight.amax())
            .max(c.control_weight.amax())
            .max(c.cross_weight.amax());
        s = s.max(c.state_linear.amax()).max(c.control_linear.amax());
    }
    for d in &p.dynamics {
        s = s.max(d.state_map.amax()).max(d.control_map.amax()).max(d.drift.amax());
    }
    for g in &p.stage_constraints {
        if !g.is_empty() {
            s = s.max(g.state_map.amax()).max(g.control_map.amax()).max(g.offset.amax());
        }
    }
    s
}

pub struct RiccatiStage {
    pub gain: DMatrix<f64>,
    pub feedforward: DVector<f64>,
    pub value_quadratic: DMatrix<f64>,
    pub value_linear: DVector<f64>,
}

/// Textbook dynamic-programming recursion for the unconstrained problem
/// with cross terms and drift:
///
/// ```text
/// H = R + B'PB,  G = S + B'PA,  g = r + B'(p + Pc)
/// K = -H^-1 G,   k = -H^-1 g
/// P <- Q + A'PA - G'H^-1 G,  p <- q + A'(p + Pc) + G'k
/// ```
///
/// Returns stages `0..T` followed by the terminal value at `T` (with empty
/// gain).
pub fn textbook_riccati(p: &LqrProblem) -> Vec<RiccatiStage> {
    let mut big_p = p.terminal_cost.state_weight.clone();
    let mut small_p = p.terminal_cost.state_linear.clone();
    let mut out = vec![RiccatiStage {
        gain: DMatrix::zeros(0, 0),
        feedforward: DVector::zeros(0),
        value_quadratic: big_p.clone(),
        value_linear: small_p.clone(),
    }];
    for t in (0..p.horizon).rev() {
        let c = &p.stage_costs[t];
        let d = &p.dynamics[t];
        let (a, b, drift) = (&d.state_map, &d.control_map, &d.drift);
        let h = &c.control_weight + b.transpose() * &big_p * b;
        let g = &c.cross_weight + b.transpose() * &big_p * a;
        let shifted = &small_p + &big_p * drift;
        let gl = &c.control_linear + b.transpose() * &shifted;
        let lu = h.clone().lu();
        let k_mat = -lu.solve(&g).expect("H invertible");
        let k_vec = -lu.solve(&gl).expect("H invertible");
        let next_p = &c.state_weight + a.transpose() * &big_p * a + g.transpose() * &k_mat;
        let next_small = &c.state_linear + a.transpose() * &shifted + g.transpose() * &k_vec;
        big_p = (&next_p + next_p.transpose()) * 0.5;
        small_p = next_small;
        out.push(RiccatiStage {
            gain: k_mat,
            feedforward: k_vec,
            value_quadratic: big_p.clone(),
            value_linear: small_p.clone(),
        });
    }
    out.reverse();
    out
}

/// Largest elementwise difference between the solver's policies and value
/// terms and the textbook recursion.
pub fn riccati_gap(solution: &Solution, oracle: &[RiccatiStage]) -> f64 {
    let mut worst = 0.0f64;
    for (t, o) in oracle.iter().enumerate() {
        if t < solution.policies.len() {
            worst = worst.max((&solution.policies[t].gain - &o.gain).amax());
            worst = worst.max((&solution.policies[t].feedforward - &o.feedforward).amax());
        }
        worst = worst.max((&solution.cost_to_go[t].quadratic - &o.value_quadratic).amax());
        worst = worst.max((&solution.cost_to_go[t].linear - &o.value_linear).amax());
    }
    worst
}

/// Reduced-gradient check independent of multipliers: the gradient of the
/// full quadratic objective projected onto the null space of all equality
/// constraints (initial condition, dynamics, auxiliary) must vanish.
pub fn reduced_gradient(p: &LqrProblem, traj: &Trajectory) -> f64 {
    let (n, m, horizon) = (p.n, p.m, p.horizon);
    let nz = (horizon + 1) * n + horizon * m;
    let xi = |t: usize| t * (n + m);
    let ui = |t: usize| t * (n + m) + n;
    let mut grad = DVector::zeros(nz);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut push_rows = |block: &[(usize, &DMatrix<f64>)]| {
        let r = block[0].1.nrows();
        for i in 0..r {
            let mut row = DVector::zeros(nz);
            for (col, mat) in block {
                for j in 0..mat.ncols() {
                    row[col + j] = mat[(i, j)];
                }
            }
            rows.push(row);
        }
    };
    let eye = DMatrix::<f64>::identity(n, n);
    push_rows(&[(xi(0), &eye)]);
    for t in 0..horizon {
        let c = &p.stage_costs[t];
        let (x, u) = (&traj.states[t], &traj.controls[t]);
        grad.rows_mut(xi(t), n)
            .copy_from(&(&c.state_weight * x + c.cross_weight.transpose() * u + &c.state_linear));
        grad.rows_mut(ui(t), m)
            .copy_from(&(&c.control_weight * u + &c.cross_weight * x + &c.control_linear));
        let d = &p.dynamics[t];
        let neg_eye = -&eye;
        push_rows(&[(xi(t), &d.state_map), (ui(t), &d.control_map), (xi(t + 1), &neg_eye)]);
        let g = &p.stage_constraints[t];
        if !g.is_empty() {
            push_rows(&[(xi(t), &g.state_map), (ui(t), &g.control_map)]);
        }
    }
    let x_t = &traj.states[horizon];
    grad.rows_mut(xi(horizon), n)
        .copy_from(&(&p.terminal_cost.state_weight * x_t + &p.terminal_cost.state_linear));
    if !p.terminal_constraint.is_empty() {
        push_rows(&[(xi(horizon), &p.terminal_constraint.state_map)]);
    }
    let a = DMatrix::from_fn(rows.len(), nz, |i, j| rows[i][j]);
    // Null space of A from the eigenvectors of A'A (small problems only).
    let eig = nalgebra::SymmetricEigen::new(a.transpose() * &a);
    let top = eig.eigenvalues.amax().max(1.0);
    let mut worst = 0.0f64;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= 1e-12 * top {
            worst = worst.max(eig.eigenvectors.column(k).dot(&grad).abs());
        }
    }
    worst / grad.amax().max(1.0)
}

pub fn is_psd(a: &DMatrix<f64>, slack: f64) -> bool {
    let sym = (a + a.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    nalgebra::SymmetricEigen::new(sym).eigenvalues.min() >= -slack * scale
}

pub fn orthonormal_rows(a: &DMatrix<f64>, tol: f64) -> bool {
    (a * a.transpose() - DMatrix::identity(a.nrows(), a.nrows())).amax() < tol
}

pub fn orthonormal_cols(a: &DMatrix<f64>, tol: f64) -> bool {
    (a.transpose() * a - DMatrix::identity(a.ncols(), a.ncols())).amax() < tol
}

fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_row_slice(&[a, b])
}

/// A contradictory instance and the stage the recursion must report.
pub struct InfeasibleCase {
    pub name: &'static str,
    pub problem: LqrProblem,
    pub stage: usize,
}

fn double_integrator() -> LqrProblem {
    DoubleIntegrator::default().build().expect("valid defaults")
}

fn without_constraints(mut p: LqrProblem) -> LqrProblem {
    p.stage_constraints = vec![StageConstraint::none(p.n, p.m); p.horizon];
    p.terminal_constraint = TerminalConstraint::none(p.n);
    p
}

/// Hand-built contradictory problems covering terminal, interior and
/// stage-0 detection, pure state and mixed constraints.
pub fn infeasible_suite() -> Vec<InfeasibleCase> {
    let mut cases = Vec::new();
    let t = 100;

    let mut p = double_integrator();
    p.terminal_constraint = TerminalConstraint {
        state_map: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
        offset: DVector::from_row_slice(&[0.0, 0.0, -1.0, 0.0]),
    };
    cases.push(InfeasibleCase {
        name: "terminal state pinned to two values",
        problem: p,
        stage: t,
    });

    let mut p = double_integrator();
    p.terminal_constraint = TerminalConstraint {
        state_map: DMatrix::zeros(1, 2),
        offset: DVector::from_row_slice(&[1.0]),
    };
    cases.push(InfeasibleCase {
        name: "terminal row 0 = 1",
        problem: p,
        stage: t,
    });

    let mut p = double_integrator();
    p.stage_constraints[30] = StageConstraint {
        state_map: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
        control_map: DMatrix::zeros(2, 1),
        offset: DVector::from_row_slice(&[-2.0, 3.0]),
    };
    cases.push(InfeasibleCase {
        name: "interior position pinned to two values",
        problem: p,
        stage: 30,
    });

    let mut p = double_integrator();
    p.stage_constraints[51] = StageConstraint::pin_state(&v2(5.0, 5.0), 1);
    cases.push(InfeasibleCase {
        name: "consecutive waypoints out of reach",
        problem: p,
        stage: 50,
    });

    let mut p = double_integrator();
    p.stage_constraints[99] = StageConstraint::pin_state(&v2(0.0, 0.0), 1);
    p.terminal_constraint = TerminalConstraint::pin_state(&v2(1.0, 0.0));
    cases.push(InfeasibleCase {
        name: "last two states incompatible with kinematics",
        problem: p,
        stage: 99,
    });

    let mut p = double_integrator();
    p.stage_constraints[0] = StageConstraint::pin_state(&v2(1.0, 0.0), 1);
    cases.push(InfeasibleCase {
        name: "stage-0 pin contradicts x_init",
        problem: p,
        stage: 0,
    });

    let mut p = double_integrator();
    p.stage_constraints[1] = StageConstraint::pin_state(&v2(2.0, 1.0), 1);
    cases.push(InfeasibleCase {
        name: "stage-1 position unreachable from x_init",
        problem: p,
        stage: 0,
    });

    let mut p = double_integrator();
    p.stage_constraints[1] = StageConstraint::pin_state(&v2(1.01, 5.0), 1);
    p.stage_constraints[2] = StageConstraint::pin_state(&v2(0.0, 0.0), 1);
    cases.push(InfeasibleCase {
        name: "reachable pin followed by unreachable pin",
        problem: p,
        stage: 1,
    });

    let mut p = double_integrator();
    p.stage_constraints[40] = StageConstraint {
        state_map: DMatrix::zeros(2, 2),
        control_map: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        offset: DVector::from_row_slice(&[0.0, 1.0]),
    };
    cases.push(InfeasibleCase {
        name: "control pinned to two values",
        problem: p,
        stage: 40,
    });

    let mut p = without_constraints(double_integrator());
    p.stage_constraints[0] = StageConstraint {
        state_map: DMatrix::zeros(1, 2),
        control_map: DMatrix::from_row_slice(1, 1, &[1.0]),
        offset: DVector::zeros(1),
    };
    p.stage_constraints[1] = StageConstraint::pin_state(&v2(1.01, 2.0), 1);
    cases.push(InfeasibleCase {
        name: "zero first control cannot reach the stage-1 velocity",
        problem: p,
        stage: 0,
    });

    let mut p = without_constraints(double_integrator());
    p.stage_constraints[70] = StageConstraint {
        state_map: DMatrix::zeros(1, 2),
        control_map: DMatrix::zeros(1, 1),
        offset: DVector::from_row_slice(&[1.0]),
    };
    cases.push(InfeasibleCase {
        name: "interior row 0 = 1",
        problem: p,
        stage: 70,
    });

    let mut p = without_constraints(double_integrator());
    p.stage_constraints[20] = StageConstraint {
        state_map: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        control_map: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        offset: DVector::from_row_slice(&[-3.0, -1.0]),
    };
    p.stage_constraints[21] = StageConstraint {
        state_map: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        control_map: DMatrix::zeros(1, 1),
        offset: DVector::from_row_slice(&[-3.0]),
    };
    cases.push(InfeasibleCase {
        name: "velocity held while control forced nonzero",
        problem: p,
        stage: 20,
    });

    cases
}
