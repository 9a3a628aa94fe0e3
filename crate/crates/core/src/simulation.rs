//! Execution under additive control noise: feedback policies versus replay
//! of the nominal open-loop controls.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{SimulationError, SolveError};
use crate::problem::LqrProblem;
use crate::solver::{check_policies, evaluate_trajectory, solve, FeedbackPolicy, SolverOptions, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceConfig {
    /// Standard deviation of each independent control-noise component.
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            trials: 100,
            seed: 0,
        }
    }
}

impl DisturbanceConfig {
    fn check(&self) -> Result<(), SimulationError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SimulationError::InvalidConfig(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.trials == 0 {
            return Err(SimulationError::InvalidConfig("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// How controls are produced during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Execution<'a> {
    /// Recompute `u_t` from the realized state.
    ClosedLoop(&'a [FeedbackPolicy]),
    /// Replay stored controls.
    OpenLoop(&'a [DVector<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecutionMode {
    ClosedLoop,
    OpenLoop,
}

impl ExecutionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ClosedLoop => "closed_loop",
            Self::OpenLoop => "open_loop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "closed_loop" => Some(Self::ClosedLoop),
            "open_loop" => Some(Self::OpenLoop),
            _ => None,
        }
    }
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Independent stream for one trial; streams for different trials never
/// overlap.
pub fn trial_stream(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws `horizon` control-noise vectors of dimension `m`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, horizon: usize, m: usize, sigma: f64) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|_| DVector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Rolls out `x[t+1] = Fx x + Fu (u + noise[t]) + f`. The returned
/// trajectory records the applied (noisy) controls. Zero noise vectors are
/// not added, so a noiseless run reproduces the nominal rollout bit for
/// bit.
pub fn rollout_with_noise(
    problem: &LqrProblem,
    execution: Execution<'_>,
    noise: &[DVector<f64>],
) -> Result<Trajectory, SolveError> {
    match execution {
        Execution::ClosedLoop(policies) => check_policies(problem, policies)?,
        Execution::OpenLoop(controls) => {
            if controls.len() != problem.horizon || controls.iter().any(|u| u.len() != problem.m) {
                return Err(SolveError::DimensionMismatch(
                    "open-loop controls do not match T and m".into(),
                ));
            }
        }
    }
    if noise.len() != problem.horizon || noise.iter().any(|w| w.len() != problem.m) {
        return Err(SolveError::DimensionMismatch("noise does not match T and m".into()));
    }
    let mut states = Vec::with_capacity(problem.horizon + 1);
    let mut controls = Vec::with_capacity(problem.horizon);
    let mut x = problem.x_init.clone();
    for (t, dynamics) in problem.dynamics.iter().enumerate() {
        let mut u = match execution {
            Execution::ClosedLoop(policies) => policies[t].control(&x),
            Execution::OpenLoop(stored) => stored[t].clone(),
        };
        if noise[t].iter().any(|&w| w != 0.0) {
            u += &noise[t];
        }
        let next = dynamics.step(&x, &u);
        states.push(x);
        controls.push(u);
        x = next;
    }
    states.push(x);
    Ok(evaluate_trajectory(problem, states, controls))
}

pub fn noisy_rollout<R: Rng + ?Sized>(
    problem: &LqrProblem,
    execution: Execution<'_>,
    sigma: f64,
    rng: &mut R,
) -> Result<Trajectory, SolveError> {
    let noise = draw_noise(rng, problem.horizon, problem.m, sigma);
    rollout_with_noise(problem, execution, &noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub mode: ExecutionMode,
    /// Residual infinity norm at each stage of
    /// [`DisturbanceReport::constrained_stages`], in the same order.
    pub residuals: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageAggregate {
    pub stage: usize,
    pub mode: ExecutionMode,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceReport {
    pub config: DisturbanceConfig,
    /// Stages carrying a constraint; the terminal stage is `T`.
    pub constrained_stages: Vec<usize>,
    /// Closed-loop then open-loop record for each trial, by trial index.
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<StageAggregate>,
}

impl DisturbanceReport {
    pub fn aggregate(&self, mode: ExecutionMode, stage: usize) -> Option<&StageAggregate> {
        self.aggregates.iter().find(|a| a.mode == mode && a.stage == stage)
    }
}

/// Mean and max residual per (mode, constrained stage), closed loop first.
pub fn aggregate_trials(constrained_stages: &[usize], trials: &[TrialRecord]) -> Vec<StageAggregate> {
    let mut out = Vec::new();
    for mode in [ExecutionMode::ClosedLoop, ExecutionMode::OpenLoop] {
        for (k, &stage) in constrained_stages.iter().enumerate() {
            let values: Vec<f64> = trials
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.residuals[k])
                .collect();
            if values.is_empty() {
                continue;
            }
            out.push(StageAggregate {
                stage,
                mode,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                max: values.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    out
}

fn constrained_stages(problem: &LqrProblem) -> Vec<usize> {
    let mut stages: Vec<usize> = problem
        .stage_constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .map(|(t, _)| t)
        .collect();
    if !problem.terminal_constraint.is_empty() {
        stages.push(problem.horizon);
    }
    stages
}

fn record(problem: &LqrProblem, stages: &[usize], trial: usize, mode: ExecutionMode, traj: &Trajectory) -> TrialRecord {
    let residuals = crate::solver::constraint_residuals(problem, traj);
    TrialRecord {
        trial,
        mode,
        residuals: stages.iter().map(|&t| residuals[t].amax()).collect(),
        objective: traj.objective,
    }
}

/// Solves once, then runs `trials` paired rollouts: within a trial the
/// closed-loop and open-loop executions see the same noise sequence.
pub fn disturbance_experiment(
    problem: &LqrProblem,
    config: &DisturbanceConfig,
    options: &SolverOptions,
) -> Result<DisturbanceReport, SimulationError> {
    config.check()?;
    let solution = solve(problem, options)?;
    let stages = constrained_stages(problem);
    let mut trials = Vec::with_capacity(2 * config.trials);
    for trial in 0..config.trials {
        let mut rng = trial_stream(config.seed, trial);
        let noise = draw_noise(&mut rng, problem.horizon, problem.m, config.sigma);
        let closed = rollout_with_noise(problem, Execution::ClosedLoop(&solution.policies), &noise)?;
        let open = rollout_with_noise(problem, Execution::OpenLoop(&solution.trajectory.controls), &noise)?;
        trials.push(record(problem, &stages, trial, ExecutionMode::ClosedLoop, &closed));
        trials.push(record(problem, &stages, trial, ExecutionMode::OpenLoop, &open));
    }
    let aggregates = aggregate_trials(&stages, &trials);
    Ok(DisturbanceReport {
        config: *config,
        constrained_stages: stages,
        trials,
        aggregates,
    })
}
