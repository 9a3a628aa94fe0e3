//! Command-line front end for the constrained LQR solver and its baselines.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use clqr::bench::{method_slope, run_benchmark, BenchConfig, Method};
use clqr::error::{KktError, SimulationError, SolveError};
use clqr::io::{
    write_bench_csv, write_disturbance_csv, write_penalty_csv, write_policy_json, write_trajectory_csv, PolicyFile,
};
use clqr::kernels::DEFAULT_RANK_TOL;
use clqr::kkt::solve_kkt;
use clqr::penalty::penalty_sweep;
use clqr::problem::DoubleIntegrator;
use clqr::problem_file::{load_problem, parse_problem, read_problem_text, save_problem, to_json, LoadOptions};
use clqr::simulation::{disturbance_experiment, DisturbanceConfig, ExecutionMode};
use clqr::solver::{solve, SolverOptions, DEFAULT_FEAS_TOL};
use clqr::LqrProblem;

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;

/// Finite-horizon LQR with linear equality constraints.
///
/// Exit codes: 0 success, 1 error, 2 infeasible.
#[derive(Debug, Parser)]
#[command(name = "clqr", version)]
struct Cli {
    /// Relative tolerance for rank decisions.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL, allow_negative_numbers = true)]
    rank_tol: f64,
    /// Feasibility tolerance for the initial state, scaled by 1 + |x_init|.
    #[arg(long, global = true, default_value_t = DEFAULT_FEAS_TOL, allow_negative_numbers = true)]
    feas_tol: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Problem file (JSON).
    problem: PathBuf,
    /// Replace quadratic weights by their symmetric part before validation.
    #[arg(long)]
    symmetrize: bool,
}

impl ProblemArgs {
    fn load(&self) -> Result<LqrProblem> {
        let options = LoadOptions {
            symmetrize: self.symmetrize,
        };
        load_problem(&self.problem, options).with_context(|| format!("loading {}", self.problem.display()))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve with the constrained Riccati recursion; write trajectory CSV and optionally the policy.
    Solve {
        #[command(flatten)]
        input: ProblemArgs,
        /// Trajectory CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Policy file (JSON).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Solve the dense KKT system directly; write trajectory CSV.
    Kkt {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time both solvers on generated problems and report log-log slopes of time against T.
    Bench {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Horizon lengths, comma separated.
        #[arg(long = "horizons", value_delimiter = ',', default_values_t = [50, 100, 200, 400])]
        horizons: Vec<usize>,
        /// Independent constraint rows as a percentage of T * m.
        #[arg(long, default_value_t = 50.0)]
        percent_constrained: f64,
        /// Timing repetitions; the minimum is recorded.
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Repetitions for the dense KKT solve (defaults to --repetitions).
        #[arg(long)]
        kkt_repetitions: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the quadratic-penalty problem for each eps and report the gap to the constrained solution.
    PenaltySweep {
        #[command(flatten)]
        input: ProblemArgs,
        /// Strictly decreasing penalty parameters, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-1, 1e-3, 1e-5, 1e-8])]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare feedback and open-loop execution under Gaussian control noise.
    Disturb {
        #[command(flatten)]
        input: ProblemArgs,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a problem file and list every violation.
    Validate {
        /// Problem file (JSON).
        problem: PathBuf,
    },
    /// Write the double-integrator waypoint problem as a problem file.
    GenDoubleIntegrator {
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        #[arg(long, num_args = 2, value_names = ["POS", "VEL"], default_values_t = [1.0, 1.0], allow_negative_numbers = true)]
        x_init: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        waypoint_stage: usize,
        #[arg(long, num_args = 2, value_names = ["POS", "VEL"], default_values_t = [-1.0, -1.0], allow_negative_numbers = true)]
        waypoint: Vec<f64>,
        #[arg(long, num_args = 2, value_names = ["POS", "VEL"], default_values_t = [0.0, 0.0], allow_negative_numbers = true)]
        terminal: Vec<f64>,
        /// Problem file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Opens `path` for writing, or stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn infeasible(stage: Option<usize>) -> ExitCode {
    match stage {
        Some(t) => eprintln!("infeasible at stage {t}"),
        None => eprintln!("infeasible"),
    }
    ExitCode::from(EXIT_INFEASIBLE)
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

fn run(cli: Cli) -> Result<ExitCode> {
    let options = SolverOptions {
        rank_tol: cli.rank_tol,
        feas_tol: cli.feas_tol,
    };
    match cli.command {
        Command::Solve { input, out, policy } => {
            let p = input.load()?;
            let sol = match solve(&p, &options) {
                Ok(sol) => sol,
                Err(SolveError::Infeasible { stage }) => {
                    if let Some(path) = &policy {
                        write_policy_json(
                            sink(Some(path))?,
                            &PolicyFile::infeasible(p.n, p.m, p.horizon, stage, &options),
                        )?;
                    }
                    return Ok(infeasible(Some(stage)));
                }
                Err(e) => return Err(e.into()),
            };
            write_trajectory_csv(sink(out.as_deref())?, &sol.trajectory)?;
            if let Some(path) = &policy {
                write_policy_json(sink(Some(path))?, &PolicyFile::from_solution(p.n, p.m, &sol, &options))?;
            }
            eprintln!("objective {:e}", sol.trajectory.objective);
            eprintln!("max residual {:e}", sol.trajectory.max_constraint_residual);
        }
        Command::Kkt { input, out } => {
            let p = input.load()?;
            let sol = match solve_kkt(&p) {
                Ok(sol) => sol,
                Err(KktError::Infeasible { residual }) => {
                    eprintln!("constraint residual {residual:e}");
                    return Ok(infeasible(None));
                }
                Err(e) => return Err(e.into()),
            };
            write_trajectory_csv(sink(out.as_deref())?, &sol.trajectory)?;
            eprintln!("objective {:e}", sol.trajectory.objective);
            eprintln!("max residual {:e}", sol.trajectory.max_constraint_residual);
        }
        Command::Bench {
            n,
            m,
            horizons,
            percent_constrained,
            repetitions,
            kkt_repetitions,
            seed,
            out,
        } => {
            let config = BenchConfig {
                n,
                m,
                horizons,
                percent_constrained,
                repetitions,
                kkt_repetitions,
                seed,
            };
            let records = run_benchmark(&config, &options)?;
            write_bench_csv(sink(out.as_deref())?, &records)?;
            for method in [Method::Clqr, Method::KktDense] {
                match method_slope(&records, method) {
                    Some(s) => eprintln!("slope {method} {s:.3}"),
                    None => eprintln!("slope {method} undefined"),
                }
            }
        }
        Command::PenaltySweep { input, eps, out } => {
            let p = input.load()?;
            let points = match penalty_sweep(&p, &eps, &options) {
                Ok(points) => points,
                Err(SolveError::Infeasible { stage }) => return Ok(infeasible(Some(stage))),
                Err(e) => return Err(e.into()),
            };
            write_penalty_csv(sink(out.as_deref())?, &points)?;
            for pt in &points {
                eprintln!("eps {:e} gap {:e}", pt.eps, pt.gap_to_constrained);
            }
        }
        Command::Disturb {
            input,
            sigma,
            trials,
            seed,
            out,
        } => {
            let p = input.load()?;
            let config = DisturbanceConfig { sigma, trials, seed };
            let report = match disturbance_experiment(&p, &config, &options) {
                Ok(r) => r,
                Err(SimulationError::Solve(SolveError::Infeasible { stage })) => return Ok(infeasible(Some(stage))),
                Err(e) => return Err(e.into()),
            };
            write_disturbance_csv(sink(out.as_deref())?, &report)?;
            for &stage in &report.constrained_stages {
                let mean = |mode| report.aggregate(mode, stage).map_or(f64::NAN, |a| a.mean);
                eprintln!(
                    "stage {stage}: mean residual closed_loop {:e} open_loop {:e}",
                    mean(ExecutionMode::ClosedLoop),
                    mean(ExecutionMode::OpenLoop)
                );
            }
        }
        Command::Validate { problem } => {
            let text = read_problem_text(&problem)?;
            let p = parse_problem(&text).with_context(|| format!("reading {}", problem.display()))?;
            let report = p.validate();
            if report.is_empty() {
                println!("valid");
            } else {
                for v in &report.violations {
                    println!("{v}");
                }
                return Ok(ExitCode::from(EXIT_ERROR));
            }
        }
        Command::GenDoubleIntegrator {
            dt,
            horizon,
            x_init,
            waypoint_stage,
            waypoint,
            terminal,
            out,
        } => {
            let p = DoubleIntegrator {
                dt,
                horizon,
                x_init: pair(&x_init),
                waypoint_stage,
                waypoint: pair(&waypoint),
                terminal: pair(&terminal),
            }
            .build()?;
            match out {
                Some(path) => save_problem(&p, &path)?,
                None => println!("{}", to_json(&p)?),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
