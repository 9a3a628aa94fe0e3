//! JSON problem files. Matrices are row-major nested arrays; numbers are
//! written with shortest round-trip precision, so save then load is
//! bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::problem::{LqrProblem, StageConstraint, StageCost, StageDynamics, TerminalConstraint, TerminalCost};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Replace quadratic weights by their symmetric part before validation.
    pub symmetrize: bool,
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRecord {
    state_weight: Rows,
    control_weight: Rows,
    cross_weight: Rows,
    state_linear: Vec<f64>,
    control_linear: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsRecord {
    state_map: Rows,
    control_map: Rows,
    drift: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintRecord {
    stage: usize,
    state_map: Rows,
    control_map: Rows,
    offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalCostRecord {
    state_weight: Rows,
    state_linear: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalConstraintRecord {
    state_map: Rows,
    offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRecord {
    n: usize,
    m: usize,
    #[serde(rename = "T")]
    horizon: usize,
    x_init: Vec<f64>,
    stage_costs: Vec<CostRecord>,
    dynamics: Vec<DynamicsRecord>,
    #[serde(default)]
    stage_constraints: Vec<ConstraintRecord>,
    terminal_cost: TerminalCostRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_constraint: Option<TerminalConstraintRecord>,
}

fn rows_of(a: &DMatrix<f64>) -> Rows {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn shape_err(field: String, detail: String) -> ProblemError {
    ProblemError::Shape { field, detail }
}

fn matrix(field: String, rows: &Rows, nrows: Option<usize>, ncols: usize) -> Result<DMatrix<f64>, ProblemError> {
    if let Some(want) = nrows {
        if rows.len() != want {
            return Err(shape_err(field, format!("expected {want} rows, found {}", rows.len())));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(shape_err(
                field,
                format!("row {i} has length {}, expected {ncols}", r.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vector(field: String, v: &[f64], len: usize) -> Result<DVector<f64>, ProblemError> {
    if v.len() != len {
        return Err(shape_err(field, format!("expected length {len}, found {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn record_of(p: &LqrProblem) -> ProblemRecord {
    let stage_constraints = p
        .stage_constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .map(|(stage, c)| ConstraintRecord {
            stage,
            state_map: rows_of(&c.state_map),
            control_map: rows_of(&c.control_map),
            offset: vec_of(&c.offset),
        })
        .collect();
    ProblemRecord {
        n: p.n,
        m: p.m,
        horizon: p.horizon,
        x_init: vec_of(&p.x_init),
        stage_costs: p
            .stage_costs
            .iter()
            .map(|c| CostRecord {
                state_weight: rows_of(&c.state_weight),
                control_weight: rows_of(&c.control_weight),
                cross_weight: rows_of(&c.cross_weight),
                state_linear: vec_of(&c.state_linear),
                control_linear: vec_of(&c.control_linear),
            })
            .collect(),
        dynamics: p
            .dynamics
            .iter()
            .map(|d| DynamicsRecord {
                state_map: rows_of(&d.state_map),
                control_map: rows_of(&d.control_map),
                drift: vec_of(&d.drift),
            })
            .collect(),
        stage_constraints,
        terminal_cost: TerminalCostRecord {
            state_weight: rows_of(&p.terminal_cost.state_weight),
            state_linear: vec_of(&p.terminal_cost.state_linear),
        },
        terminal_constraint: (!p.terminal_constraint.is_empty()).then(|| TerminalConstraintRecord {
            state_map: rows_of(&p.terminal_constraint.state_map),
            offset: vec_of(&p.terminal_constraint.offset),
        }),
    }
}

fn problem_of(r: &ProblemRecord) -> Result<LqrProblem, ProblemError> {
    let (n, m, horizon) = (r.n, r.m, r.horizon);
    if r.stage_costs.len() != horizon {
        return Err(shape_err(
            "stage_costs".into(),
            format!("expected {horizon} entries, found {}", r.stage_costs.len()),
        ));
    }
    if r.dynamics.len() != horizon {
        return Err(shape_err(
            "dynamics".into(),
            format!("expected {horizon} entries, found {}", r.dynamics.len()),
        ));
    }
    let mut p = LqrProblem::blank(n, m, horizon);
    p.x_init = vector("x_init".into(), &r.x_init, n)?;
    for (t, c) in r.stage_costs.iter().enumerate() {
        let f = |name: &str| format!("stage_costs[{t}].{name}");
        p.stage_costs[t] = StageCost {
            state_weight: matrix(f("state_weight"), &c.state_weight, Some(n), n)?,
            control_weight: matrix(f("control_weight"), &c.control_weight, Some(m), m)?,
            cross_weight: matrix(f("cross_weight"), &c.cross_weight, Some(m), n)?,
            state_linear: vector(f("state_linear"), &c.state_linear, n)?,
            control_linear: vector(f("control_linear"), &c.control_linear, m)?,
        };
    }
    for (t, d) in r.dynamics.iter().enumerate() {
        let f = |name: &str| format!("dynamics[{t}].{name}");
        p.dynamics[t] = StageDynamics {
            state_map: matrix(f("state_map"), &d.state_map, Some(n), n)?,
            control_map: matrix(f("control_map"), &d.control_map, Some(n), m)?,
            drift: vector(f("drift"), &d.drift, n)?,
        };
    }
    let mut seen = vec![false; horizon];
    for (k, c) in r.stage_constraints.iter().enumerate() {
        let t = c.stage;
        let f = |name: &str| format!("stage_constraints[{k}] (stage {t}).{name}");
        if t >= horizon {
            return Err(shape_err(f("stage"), format!("stage must be below T = {horizon}")));
        }
        if std::mem::replace(&mut seen[t], true) {
            return Err(shape_err(
                f("stage"),
                "duplicate constraint entry for this stage".into(),
            ));
        }
        let state_map = matrix(f("state_map"), &c.state_map, None, n)?;
        let rows = state_map.nrows();
        p.stage_constraints[t] = StageConstraint {
            state_map,
            control_map: matrix(f("control_map"), &c.control_map, Some(rows), m)?,
            offset: vector(f("offset"), &c.offset, rows)?,
        };
    }
    let tc = &r.terminal_cost;
    p.terminal_cost = TerminalCost {
        state_weight: matrix("terminal_cost.state_weight".into(), &tc.state_weight, Some(n), n)?,
        state_linear: vector("terminal_cost.state_linear".into(), &tc.state_linear, n)?,
    };
    if let Some(c) = &r.terminal_constraint {
        let state_map = matrix("terminal_constraint.state_map".into(), &c.state_map, None, n)?;
        let rows = state_map.nrows();
        p.terminal_constraint = TerminalConstraint {
            state_map,
            offset: vector("terminal_constraint.offset".into(), &c.offset, rows)?,
        };
    }
    Ok(p)
}

fn check_finite(p: &LqrProblem) -> Result<(), ProblemError> {
    let report = p.validate();
    if report.contains_code(crate::problem::ViolationCode::NonFinite) {
        return Err(ProblemError::Invalid(report));
    }
    Ok(())
}

/// Serializes a problem. Non-finite entries are rejected because JSON
/// cannot represent them.
pub fn to_json(p: &LqrProblem) -> Result<String, ProblemError> {
    check_finite(p)?;
    serde_json::to_string_pretty(&record_of(p)).map_err(|e| ProblemError::InvalidInput(e.to_string()))
}

/// Parses a problem and checks shapes only; semantic validation is left to
/// the caller.
pub fn parse_problem(text: &str) -> Result<LqrProblem, ProblemError> {
    let record: ProblemRecord = serde_json::from_str(text).map_err(|e| ProblemError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    problem_of(&record)
}

/// Parses, optionally symmetrizes, and validates.
pub fn problem_from_json(text: &str, options: LoadOptions) -> Result<LqrProblem, ProblemError> {
    let mut p = parse_problem(text)?;
    if options.symmetrize {
        p.symmetrize_weights();
    }
    let report = p.validate();
    if !report.is_empty() {
        return Err(ProblemError::Invalid(report));
    }
    Ok(p)
}

pub fn read_problem_text(path: &Path) -> Result<String, ProblemError> {
    fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_problem(path: &Path, options: LoadOptions) -> Result<LqrProblem, ProblemError> {
    problem_from_json(&read_problem_text(path)?, options)
}

pub fn save_problem(p: &LqrProblem, path: &Path) -> Result<(), ProblemError> {
    let text = to_json(p)?;
    fs::write(path, text + "\n").map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })
}
