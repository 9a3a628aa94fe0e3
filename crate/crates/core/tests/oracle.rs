mod common;

use clqr::generate::random_unconstrained;
use clqr::kkt::{solve_kkt, stationarity_residual};
use clqr::solver::{backward_pass, solve, SolverOptions};
use common::{
    data_scale, is_psd, orthonormal_cols, orthonormal_rows, random_case, reduced_gradient, riccati_gap,
    textbook_riccati, trajectory_gap,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn agrees_with_kkt_on_random_problems() {
    let opts = SolverOptions::default();
    let mut wide = 0;
    for seed in 0..200 {
        let p = random_case(seed);
        if p.stage_constraints.iter().any(|c| c.rows() > p.m) {
            wide += 1;
        }
        let ours = solve(&p, &opts).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let oracle = solve_kkt(&p).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let gap = trajectory_gap(&ours.trajectory, &oracle.trajectory);
        assert!(gap < 1e-6, "seed {seed}: gap {gap:.3e}");
    }
    assert!(
        wide > 20,
        "only {wide} problems with more constraint rows than controls"
    );
}

#[test]
fn kkt_stationarity_at_recursive_solution() {
    let opts = SolverOptions::default();
    for seed in 1000..1060 {
        let p = random_case(seed);
        let ours = solve(&p, &opts).unwrap();
        let oracle = solve_kkt(&p).unwrap();
        let r = stationarity_residual(&p, &ours.trajectory, &oracle.multipliers);
        assert!(r < 1e-6 * (1.0 + data_scale(&p)), "seed {seed}: {r:.3e}");
    }
}

#[test]
fn reduced_gradient_vanishes() {
    let opts = SolverOptions::default();
    for seed in 2000..2040 {
        let p = random_case(seed);
        let ours = solve(&p, &opts).unwrap();
        assert!(ours.trajectory.max_constraint_residual < 1e-8, "seed {seed}");
        let g = reduced_gradient(&p, &ours.trajectory);
        assert!(g < 1e-7, "seed {seed}: {g:.3e}");
    }
}

#[test]
fn reduces_to_textbook_riccati() {
    let opts = SolverOptions::default();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, horizon) = (
            rng.random_range(1..=6),
            rng.random_range(1..=3),
            rng.random_range(1..=20),
        );
        let p = random_unconstrained(&mut rng, n, m, horizon);
        let sol = solve(&p, &opts).unwrap();
        let gap = riccati_gap(&sol, &textbook_riccati(&p));
        assert!(gap < 1e-9, "seed {seed}: {gap:.3e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_pass_structure(seed in any::<u64>()) {
        let p = random_case(seed);
        let pass = backward_pass(&p, &SolverOptions::default()).unwrap();
        for (t, c) in pass.constraint_to_go.iter().enumerate() {
            prop_assert!(c.rows() <= p.n, "stage {t}");
            prop_assert!(orthonormal_rows(&c.stacked(), 1e-10), "stage {t}");
        }
        for (t, v) in pass.cost_to_go.iter().enumerate() {
            prop_assert_eq!(&v.quadratic, &v.quadratic.transpose());
            prop_assert!(is_psd(&v.quadratic, 1e-9), "stage {t}");
        }
        for z in &pass.control_null_bases {
            prop_assert!(z.ncols() == 0 || orthonormal_cols(z, 1e-10));
        }
    }

    #[test]
    fn solve_is_deterministic(seed in any::<u64>()) {
        let p = random_case(seed);
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn constrained_optimum_beats_feasible_perturbations(seed in any::<u64>(), scale in 0.01f64..1.0) {
        // Controls moved along the per-stage null space of the combined
        // constraint map keep every constraint satisfied and cannot lower
        // the cost.
        let p = random_case(seed);
        let opts = SolverOptions::default();
        let pass = backward_pass(&p, &opts).unwrap();
        let sol = solve(&p, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let t = rng.random_range(0..p.horizon);
        let z = &pass.control_null_bases[t];
        prop_assume!(z.ncols() > 0);
        let w = nalgebra::DVector::from_fn(z.ncols(), |_, _| rng.random_range(-1.0..1.0)) * scale;
        let mut controls = sol.trajectory.controls.clone();
        let mut states = vec![p.x_init.clone()];
        for s in 0..p.horizon {
            if s == t {
                controls[s] += z * &w;
            } else if s > t {
                controls[s] = pass.policies[s].control(&states[s]);
            }
            let next = p.dynamics[s].step(&states[s], &controls[s]);
            states.push(next);
        }
        let perturbed = clqr::solver::evaluate_trajectory(&p, states, controls);
        prop_assert!(perturbed.max_constraint_residual < 1e-7);
        let tol = 1e-9 * sol.trajectory.objective.abs().max(1.0);
        prop_assert!(perturbed.objective >= sol.trajectory.objective - tol);
    }
}
