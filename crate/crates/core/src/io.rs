//! CSV and JSON result files, with readers that recover every number
//! exactly. Floats are written in Rust's shortest round-trip form.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::{method_slope, BenchmarkRecord, Method};
use crate::error::{OutputError, SolveError};
use crate::penalty::PenaltyPoint;
use crate::simulation::{DisturbanceReport, ExecutionMode};
use crate::solver::{Solution, SolverOptions, Trajectory};

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Result<f64, OutputError> {
    s.trim()
        .parse()
        .map_err(|_| OutputError::Malformed(format!("not a number: {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize, OutputError> {
    s.trim()
        .parse()
        .map_err(|_| OutputError::Malformed(format!("not an index: {s:?}")))
}

fn field(rec: &csv::StringRecord, i: usize) -> Result<&str, OutputError> {
    rec.get(i)
        .ok_or_else(|| OutputError::Malformed(format!("missing column {i} in {rec:?}")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

fn expect_header(rdr: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<(), OutputError> {
    let got: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != want {
        return Err(OutputError::Malformed(format!(
            "expected header {want:?}, found {got:?}"
        )));
    }
    Ok(())
}

/// Trajectory CSV: `t,x0..x{n-1},u0..u{m-1}`, one row per stage `0..=T`,
/// control columns empty on the terminal row.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<(), OutputError> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let m = traj.controls.first().map_or(0, |u| u.len());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    wtr.write_record(&header)?;
    for (t, x) in traj.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|&v| num(v)));
        match traj.controls.get(t) {
            Some(u) => row.extend(u.iter().map(|&v| num(v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// States and controls read back from a trajectory CSV.
/// States `x_0..x_T` and controls `u_0..u_{T-1}`.
pub type StatesAndControls = (Vec<DVector<f64>>, Vec<DVector<f64>>);

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<StatesAndControls, OutputError> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(OutputError::Malformed("first column must be t".into()));
    }
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if n + m + 1 != header.len() {
        return Err(OutputError::Malformed(format!("unexpected columns {header:?}")));
    }
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if parse_usize(field(&rec, 0)?)? != k {
            return Err(OutputError::Malformed(format!("row {k} is out of order")));
        }
        let x = (1..=n)
            .map(|i| parse_f64(field(&rec, i)?))
            .collect::<Result<Vec<_>, _>>()?;
        states.push(DVector::from_vec(x));
        let cells: Vec<&str> = (n + 1..=n + m).map(|i| field(&rec, i)).collect::<Result<_, _>>()?;
        if cells.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if states.len() != controls.len() + 1 {
            return Err(OutputError::Malformed(format!(
                "controls present after terminal row at {k}"
            )));
        }
        let u = cells.iter().map(|c| parse_f64(c)).collect::<Result<Vec<_>, _>>()?;
        controls.push(DVector::from_vec(u));
    }
    if states.len() != controls.len() + 1 {
        return Err(OutputError::Malformed(
            "expected exactly one terminal row without controls".into(),
        ));
    }
    Ok((states, controls))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStage {
    pub stage: usize,
    /// `m x n`, row-major.
    pub gain: Vec<Vec<f64>>,
    pub feedforward: Vec<f64>,
}

/// Policy file: per-stage gains and feedforward terms plus solver
/// metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub rank_tol: f64,
    pub feas_tol: f64,
    pub infeasible: bool,
    pub infeasible_stage: Option<usize>,
    /// Row count of the constraint-to-go at each stage `0..=T`.
    pub constraint_to_go_rows: Vec<usize>,
    pub stages: Vec<PolicyStage>,
}

impl PolicyFile {
    pub fn from_solution(n: usize, m: usize, solution: &Solution, options: &SolverOptions) -> Self {
        Self {
            n,
            m,
            horizon: solution.policies.len(),
            rank_tol: options.rank_tol,
            feas_tol: options.feas_tol,
            infeasible: false,
            infeasible_stage: None,
            constraint_to_go_rows: solution.constraint_to_go.iter().map(|c| c.rows()).collect(),
            stages: solution
                .policies
                .iter()
                .enumerate()
                .map(|(stage, p)| PolicyStage {
                    stage,
                    gain: p.gain.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    feedforward: p.feedforward.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Metadata-only file for a problem found infeasible.
    pub fn infeasible(n: usize, m: usize, horizon: usize, stage: usize, options: &SolverOptions) -> Self {
        Self {
            n,
            m,
            horizon,
            rank_tol: options.rank_tol,
            feas_tol: options.feas_tol,
            infeasible: true,
            infeasible_stage: Some(stage),
            constraint_to_go_rows: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn from_error(n: usize, m: usize, horizon: usize, err: &SolveError, options: &SolverOptions) -> Option<Self> {
        match err {
            SolveError::Infeasible { stage } => Some(Self::infeasible(n, m, horizon, *stage, options)),
            _ => None,
        }
    }

    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        self.stages
            .iter()
            .map(|s| DMatrix::from_fn(self.m, self.n, |i, j| s.gain[i][j]))
            .collect()
    }
}

pub fn write_policy_json<W: Write>(mut w: W, policy: &PolicyFile) -> Result<(), OutputError> {
    serde_json::to_writer_pretty(&mut w, policy)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_policy_json<R: Read>(r: R) -> Result<PolicyFile, OutputError> {
    let p: PolicyFile = serde_json::from_reader(r)?;
    if p.stages
        .iter()
        .any(|s| s.gain.len() != p.m || s.gain.iter().any(|row| row.len() != p.n))
    {
        return Err(OutputError::Malformed("gain shape does not match n and m".into()));
    }
    Ok(p)
}

const PENALTY_HEADER: [&str; 4] = ["eps", "gap_inf_norm", "objective", "max_constraint_residual"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyRow {
    pub eps: f64,
    pub gap_inf_norm: f64,
    /// Penalized objective: cost plus `(1/eps)` times the squared residual.
    pub objective: f64,
    pub max_constraint_residual: f64,
}

impl From<&PenaltyPoint> for PenaltyRow {
    fn from(p: &PenaltyPoint) -> Self {
        Self {
            eps: p.eps,
            gap_inf_norm: p.gap_to_constrained,
            objective: p.penalized_objective,
            max_constraint_residual: p.trajectory.max_constraint_residual,
        }
    }
}

pub fn write_penalty_csv<W: Write>(w: W, points: &[PenaltyPoint]) -> Result<(), OutputError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PENALTY_HEADER)?;
    for p in points {
        let r = PenaltyRow::from(p);
        wtr.write_record([
            num(r.eps),
            num(r.gap_inf_norm),
            num(r.objective),
            num(r.max_constraint_residual),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_penalty_csv<R: Read>(r: R) -> Result<Vec<PenaltyRow>, OutputError> {
    let mut rdr = reader(r);
    expect_header(&mut rdr, &PENALTY_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(PenaltyRow {
                eps: parse_f64(field(&rec, 0)?)?,
                gap_inf_norm: parse_f64(field(&rec, 1)?)?,
                objective: parse_f64(field(&rec, 2)?)?,
                max_constraint_residual: parse_f64(field(&rec, 3)?)?,
            })
        })
        .collect()
}

const DISTURBANCE_HEADER: [&str; 5] = ["trial", "mode", "stage", "residual_inf_norm", "objective"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceRow {
    pub trial: usize,
    pub mode: ExecutionMode,
    pub stage: usize,
    pub residual_inf_norm: f64,
    pub objective: f64,
}

pub fn disturbance_rows(report: &DisturbanceReport) -> Vec<DisturbanceRow> {
    let mut rows = Vec::new();
    for rec in &report.trials {
        for (&stage, &res) in report.constrained_stages.iter().zip(&rec.residuals) {
            rows.push(DisturbanceRow {
                trial: rec.trial,
                mode: rec.mode,
                stage,
                residual_inf_norm: res,
                objective: rec.objective,
            });
        }
    }
    rows
}

/// One row per (trial, mode, constrained stage), followed by `#` summary
/// lines with the per-stage mean and max for each mode.
pub fn write_disturbance_csv<W: Write>(mut w: W, report: &DisturbanceReport) -> Result<(), OutputError> {
    {
        let mut wtr = csv::Writer::from_writer(&mut w);
        wtr.write_record(DISTURBANCE_HEADER)?;
        for r in disturbance_rows(report) {
            wtr.write_record([
                r.trial.to_string(),
                r.mode.to_string(),
                r.stage.to_string(),
                num(r.residual_inf_norm),
                num(r.objective),
            ])?;
        }
        wtr.flush()?;
    }
    let c = &report.config;
    writeln!(w, "# sigma={} trials={} seed={}", num(c.sigma), c.trials, c.seed)?;
    for a in &report.aggregates {
        writeln!(
            w,
            "# mode={} stage={} mean={} max={}",
            a.mode,
            a.stage,
            num(a.mean),
            num(a.max)
        )?;
    }
    Ok(())
}

pub fn read_disturbance_csv<R: Read>(r: R) -> Result<Vec<DisturbanceRow>, OutputError> {
    let mut rdr = reader(r);
    expect_header(&mut rdr, &DISTURBANCE_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let mode = field(&rec, 1)?;
            Ok(DisturbanceRow {
                trial: parse_usize(field(&rec, 0)?)?,
                mode: ExecutionMode::parse(mode.trim())
                    .ok_or_else(|| OutputError::Malformed(format!("unknown mode {mode:?}")))?,
                stage: parse_usize(field(&rec, 2)?)?,
                residual_inf_norm: parse_f64(field(&rec, 3)?)?,
                objective: parse_f64(field(&rec, 4)?)?,
            })
        })
        .collect()
}

const BENCH_HEADER: [&str; 7] = [
    "method",
    "n",
    "m",
    "T",
    "percent_constrained",
    "wall_time_seconds",
    "check_residual",
];

/// Benchmark rows followed by `# slope <method>=<value>` lines for the
/// log-log fit of wall time against `T`.
pub fn write_bench_csv<W: Write>(mut w: W, records: &[BenchmarkRecord]) -> Result<(), OutputError> {
    {
        let mut wtr = csv::Writer::from_writer(&mut w);
        wtr.write_record(BENCH_HEADER)?;
        for r in records {
            wtr.write_record([
                r.method.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.horizon.to_string(),
                num(r.percent_constrained),
                num(r.wall_time_seconds),
                num(r.check_residual),
            ])?;
        }
        wtr.flush()?;
    }
    for method in [Method::Clqr, Method::KktDense] {
        if let Some(s) = method_slope(records, method) {
            writeln!(w, "# slope {method}={}", num(s))?;
        }
    }
    Ok(())
}

pub fn read_bench_csv<R: Read>(r: R) -> Result<Vec<BenchmarkRecord>, OutputError> {
    let mut rdr = reader(r);
    expect_header(&mut rdr, &BENCH_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let method = field(&rec, 0)?;
            Ok(BenchmarkRecord {
                method: Method::parse(method.trim())
                    .ok_or_else(|| OutputError::Malformed(format!("unknown method {method:?}")))?,
                n: parse_usize(field(&rec, 1)?)?,
                m: parse_usize(field(&rec, 2)?)?,
                horizon: parse_usize(field(&rec, 3)?)?,
                percent_constrained: parse_f64(field(&rec, 4)?)?,
                wall_time_seconds: parse_f64(field(&rec, 5)?)?,
                check_residual: parse_f64(field(&rec, 6)?)?,
            })
        })
        .collect()
}
