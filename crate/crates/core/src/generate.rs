//! Random problem generators. Constrained problems are feasible by
//! construction: constraints are drawn to hold along a reference
//! trajectory obtained by simulating random controls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::problem::{LqrProblem, StageConstraint, StageCost, StageDynamics, TerminalConstraint};

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Convex stage cost: the joint `(x, u)` weight is `L L' / (n + m)` plus a
/// diagonal shift on the control block, so `Quu` is positive definite and
/// its Schur complement is positive semi-definite.
fn random_cost<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> StageCost {
    let k = n + m;
    let l = gaussian(rng, k, k);
    let mut w = &l * l.transpose() / k as f64;
    for i in n..k {
        w[(i, i)] += 0.1;
    }
    let w = (&w + w.transpose()) * 0.5;
    StageCost {
        state_weight: w.view((0, 0), (n, n)).into_owned(),
        control_weight: w.view((n, n), (m, m)).into_owned(),
        cross_weight: w.view((n, 0), (m, n)).into_owned(),
        state_linear: gaussian_vec(rng, n) * 0.1,
        control_linear: gaussian_vec(rng, m) * 0.1,
    }
}

/// Dynamics near the identity so trajectories stay bounded over short
/// horizons.
fn random_dynamics<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, drift: bool) -> StageDynamics {
    let scale = 0.3 / (n as f64).sqrt();
    StageDynamics {
        state_map: DMatrix::identity(n, n) + gaussian(rng, n, n) * scale,
        control_map: gaussian(rng, n, m) / (n as f64).sqrt(),
        drift: if drift {
            gaussian_vec(rng, n) * 0.1
        } else {
            DVector::zeros(n)
        },
    }
}

fn random_terminal_weight<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let l = gaussian(rng, n, n);
    let w = &l * l.transpose() / n as f64;
    (&w + w.transpose()) * 0.5
}

/// Unconstrained problem with random convex costs, dynamics and drift.
pub fn random_unconstrained<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, horizon: usize) -> LqrProblem {
    let mut p = LqrProblem::blank(n, m, horizon);
    for t in 0..horizon {
        p.stage_costs[t] = random_cost(rng, n, m);
        p.dynamics[t] = random_dynamics(rng, n, m, true);
    }
    p.terminal_cost.state_weight = random_terminal_weight(rng, n);
    p.terminal_cost.state_linear = gaussian_vec(rng, n) * 0.1;
    p.x_init = gaussian_vec(rng, n);
    p
}

fn reference_trajectory<R: Rng + ?Sized>(rng: &mut R, p: &LqrProblem) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut xs = vec![p.x_init.clone()];
    let mut us = Vec::with_capacity(p.horizon);
    for d in &p.dynamics {
        let u = gaussian_vec(rng, p.m);
        let x = d.step(xs.last().expect("nonempty"), &u);
        us.push(u);
        xs.push(x);
    }
    (xs, us)
}

/// Random feasible problem with mixed constraints: each stage `0..=T`
/// carries a constraint with probability `density`, with `1..=n` rows and,
/// for half of the constrained control stages, a nonzero control block.
pub fn random_feasible<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, horizon: usize, density: f64) -> LqrProblem {
    let mut p = random_unconstrained(rng, n, m, horizon);
    let (xs, us) = reference_trajectory(rng, &p);
    for t in 0..horizon {
        if rng.random::<f64>() >= density {
            continue;
        }
        let rows = rng.random_range(1..=n);
        let gx = gaussian(rng, rows, n);
        let gu = if rng.random::<bool>() {
            gaussian(rng, rows, m)
        } else {
            DMatrix::zeros(rows, m)
        };
        let offset = -(&gx * &xs[t] + &gu * &us[t]);
        p.stage_constraints[t] = StageConstraint {
            state_map: gx,
            control_map: gu,
            offset,
        };
    }
    if rng.random::<f64>() < density {
        let rows = rng.random_range(1..=n);
        let gx = gaussian(rng, rows, n);
        let offset = -(&gx * &xs[horizon]);
        p.terminal_constraint = TerminalConstraint { state_map: gx, offset };
    }
    p
}

/// Stages and row counts for `percent` constrained rows relative to the
/// `T * m` control degrees of freedom, spread over evenly spaced stages in
/// `1..=T` with at most `min(n, m)` rows per stage.
pub fn constraint_layout(n: usize, m: usize, horizon: usize, percent: f64) -> Vec<(usize, usize)> {
    let total = ((percent / 100.0) * (horizon * m) as f64).round() as usize;
    let per_stage = n.min(m).max(1);
    let total = total.min(horizon * per_stage);
    if total == 0 {
        return Vec::new();
    }
    let stages = total.div_ceil(per_stage).min(horizon);
    let base = total / stages;
    let extra = total % stages;
    (0..stages)
        .map(|k| {
            let stage = ((k + 1) * horizon).div_ceil(stages);
            (stage, base + usize::from(k < extra))
        })
        .collect()
}

/// Benchmark instance: pure state constraints (`Gu = 0`) placed by
/// [`constraint_layout`], consistent with a reference trajectory.
pub fn benchmark_problem<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, horizon: usize, percent: f64) -> LqrProblem {
    let mut p = LqrProblem::blank(n, m, horizon);
    for t in 0..horizon {
        p.stage_costs[t] = random_cost(rng, n, m);
        p.dynamics[t] = random_dynamics(rng, n, m, false);
    }
    p.terminal_cost.state_weight = random_terminal_weight(rng, n);
    p.x_init = gaussian_vec(rng, n);
    let (xs, _) = reference_trajectory(rng, &p);
    for (stage, rows) in constraint_layout(n, m, horizon, percent) {
        let gx = gaussian(rng, rows, n);
        let offset = -(&gx * &xs[stage]);
        if stage == horizon {
            p.terminal_constraint = TerminalConstraint { state_map: gx, offset };
        } else {
            p.stage_constraints[stage] = StageConstraint {
                state_map: gx,
                control_map: DMatrix::zeros(rows, m),
                offset,
            };
        }
    }
    p
}
