//! Wall-clock comparison of the recursive solver against the dense KKT
//! solve on generated problems of growing horizon.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KktError, SolveError};
use crate::generate::benchmark_problem;
use crate::kkt::solve_kkt;
use crate::solver::{solve, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Clqr,
    KktDense,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Clqr => "clqr",
            Self::KktDense => "kkt_dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clqr" => Some(Self::Clqr),
            "kkt_dense" => Some(Self::KktDense),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub percent_constrained: f64,
    /// Minimum over the repetitions, from a monotonic clock.
    pub wall_time_seconds: f64,
    /// Largest constraint residual of the computed trajectory.
    pub check_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n: usize,
    pub m: usize,
    pub horizons: Vec<usize>,
    pub percent_constrained: f64,
    pub repetitions: usize,
    /// Repetitions for the dense solve; defaults to `repetitions`.
    pub kkt_repetitions: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 8,
            m: 2,
            horizons: vec![50, 100, 200, 400],
            percent_constrained: 50.0,
            repetitions: 10,
            kkt_repetitions: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("clqr failed at T = {horizon}: {source}")]
    Solve { horizon: usize, source: SolveError },
    #[error("kkt failed at T = {horizon}: {source}")]
    Kkt { horizon: usize, source: KktError },
}

/// Runs `f` `repetitions` times and returns the fastest wall time together
/// with the last result.
pub fn time_min<T, E>(repetitions: usize, mut f: impl FnMut() -> Result<T, E>) -> Result<(f64, T), E> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repetitions.max(1) {
        let start = Instant::now();
        let out = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((best, last.expect("at least one repetition")))
}

fn check(config: &BenchConfig) -> Result<(), BenchError> {
    let bad = |s: &str| Err(BenchError::InvalidConfig(s.into()));
    if config.n == 0 || config.m == 0 {
        return bad("n and m must be positive");
    }
    if config.horizons.is_empty() || config.horizons.contains(&0) {
        return bad("horizon list must be nonempty and positive");
    }
    if !(0.0..=100.0).contains(&config.percent_constrained) {
        return bad("percent_constrained must lie in [0, 100]");
    }
    if config.repetitions == 0 || config.kkt_repetitions == Some(0) {
        return bad("repetitions must be at least 1");
    }
    Ok(())
}

/// Times both methods on one generated problem per horizon. Problems are
/// seeded by `(seed, T)` so each row is reproducible on its own.
pub fn run_benchmark(config: &BenchConfig, options: &SolverOptions) -> Result<Vec<BenchmarkRecord>, BenchError> {
    check(config)?;
    let mut out = Vec::with_capacity(2 * config.horizons.len());
    for &horizon in &config.horizons {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(horizon as u64);
        let problem = benchmark_problem(&mut rng, config.n, config.m, horizon, config.percent_constrained);
        let record = |method, wall_time_seconds, check_residual| BenchmarkRecord {
            method,
            n: config.n,
            m: config.m,
            horizon,
            percent_constrained: config.percent_constrained,
            wall_time_seconds,
            check_residual,
        };

        let (t, sol) = time_min(config.repetitions, || solve(&problem, options))
            .map_err(|source| BenchError::Solve { horizon, source })?;
        out.push(record(Method::Clqr, t, sol.trajectory.max_constraint_residual));

        let reps = config.kkt_repetitions.unwrap_or(config.repetitions);
        let (t, sol) = time_min(reps, || solve_kkt(&problem)).map_err(|source| BenchError::Kkt { horizon, source })?;
        out.push(record(Method::KktDense, t, sol.trajectory.max_constraint_residual));
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`. Needs at least two
/// distinct positive abscissae.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope of wall time against `T` for `method`.
pub fn method_slope(records: &[BenchmarkRecord], method: Method) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.horizon as f64, r.wall_time_seconds))
        .collect();
    loglog_slope(&pts)
}
