//! Finite-horizon LQR with linear equality constraints.
//!
//! The primary entry point is [`solver::solve`], a backward recursion that
//! returns affine feedback policies which account for every stage and
//! terminal constraint. [`kkt`] solves the same problem directly as a dense
//! KKT system, [`penalty`] replaces constraints by quadratic penalties, and
//! [`simulation`] compares feedback and open-loop execution under control
//! noise.

pub mod bench;
pub mod error;
pub mod generate;
pub mod io;
pub mod kernels;
pub mod kkt;
pub mod penalty;
pub mod problem;
pub mod problem_file;
pub mod simulation;
pub mod solver;

pub use error::{KernelError, KktError, ProblemError, SimulationError, SolveError};
pub use problem::{DoubleIntegrator, LqrProblem, ValidationReport};
pub use solver::{solve, Solution, SolverOptions, Trajectory};
