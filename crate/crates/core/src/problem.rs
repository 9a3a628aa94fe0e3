//! Problem data for the finite-horizon, equality-constrained LQR problem.
//!
//! Costs use the half-quadratic convention
//!
//! ```text
//! cost_t(x, u) = 1/2 x'Qxx x + 1/2 u'Quu u + u'Qux x + qx'x + qu'u
//! cost_T(x)    = 1/2 x'Qxx_T x + qx_T'x
//! ```
//!
//! with dynamics `x[t+1] = Fx x[t] + Fu u[t] + f` and linear equality
//! constraints `Gx x[t] + Gu u[t] + g = 0` (stage) and `Gx_T x[T] + g_T = 0`
//! (terminal). The initial state is fixed data.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::ProblemError;

/// Symmetry tolerance for the quadratic weight blocks, relative to
/// `max(1, |Q|_max)`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalue slack for positive semi-definiteness, relative to
/// `max(1, |Q|_max)`.
pub const PSD_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub state_weight: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
    /// `m x n` cross weight.
    pub cross_weight: DMatrix<f64>,
    pub state_linear: DVector<f64>,
    pub control_linear: DVector<f64>,
}

impl StageCost {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            state_weight: DMatrix::zeros(n, n),
            control_weight: DMatrix::zeros(m, m),
            cross_weight: DMatrix::zeros(m, n),
            state_linear: DVector::zeros(n),
            control_linear: DVector::zeros(m),
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.state_weight * x))
            + 0.5 * u.dot(&(&self.control_weight * u))
            + u.dot(&(&self.cross_weight * x))
            + self.state_linear.dot(x)
            + self.control_linear.dot(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub state_weight: DMatrix<f64>,
    pub state_linear: DVector<f64>,
}

impl TerminalCost {
    pub fn zeros(n: usize) -> Self {
        Self {
            state_weight: DMatrix::zeros(n, n),
            state_linear: DVector::zeros(n),
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.state_weight * x)) + self.state_linear.dot(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDynamics {
    pub state_map: DMatrix<f64>,
    pub control_map: DMatrix<f64>,
    pub drift: DVector<f64>,
}

impl StageDynamics {
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x + &self.control_map * u + &self.drift
    }
}

/// `state_map x + control_map u + offset = 0`; zero rows means unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraint {
    pub state_map: DMatrix<f64>,
    pub control_map: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl StageConstraint {
    pub fn none(n: usize, m: usize) -> Self {
        Self {
            state_map: DMatrix::zeros(0, n),
            control_map: DMatrix::zeros(0, m),
            offset: DVector::zeros(0),
        }
    }

    /// Pins `x` to `target` with no control dependence.
    pub fn pin_state(target: &DVector<f64>, m: usize) -> Self {
        let n = target.len();
        Self {
            state_map: DMatrix::identity(n, n),
            control_map: DMatrix::zeros(n, m),
            offset: -target,
        }
    }

    pub fn rows(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn residual(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x + &self.control_map * u + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalConstraint {
    pub state_map: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl TerminalConstraint {
    pub fn none(n: usize) -> Self {
        Self {
            state_map: DMatrix::zeros(0, n),
            offset: DVector::zeros(0),
        }
    }

    pub fn pin_state(target: &DVector<f64>) -> Self {
        let n = target.len();
        Self {
            state_map: DMatrix::identity(n, n),
            offset: -target,
        }
    }

    pub fn rows(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub n: usize,
    pub m: usize,
    /// Number of control stages `T`; states run `0..=T`.
    pub horizon: usize,
    pub stage_costs: Vec<StageCost>,
    pub terminal_cost: TerminalCost,
    pub dynamics: Vec<StageDynamics>,
    pub stage_constraints: Vec<StageConstraint>,
    pub terminal_constraint: TerminalConstraint,
    pub x_init: DVector<f64>,
}

impl LqrProblem {
    /// A problem with zero costs, zero dynamics and no constraints, to be
    /// filled in by the caller.
    pub fn blank(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            n,
            m,
            horizon,
            stage_costs: vec![StageCost::zeros(n, m); horizon],
            terminal_cost: TerminalCost::zeros(n),
            dynamics: vec![
                StageDynamics {
                    state_map: DMatrix::zeros(n, n),
                    control_map: DMatrix::zeros(n, m),
                    drift: DVector::zeros(n),
                };
                horizon
            ],
            stage_constraints: vec![StageConstraint::none(n, m); horizon],
            terminal_constraint: TerminalConstraint::none(n),
            x_init: DVector::zeros(n),
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        self.terminal_constraint.is_empty() && self.stage_constraints.iter().all(|c| c.is_empty())
    }

    /// Total number of auxiliary constraint rows, terminal included.
    pub fn constraint_rows(&self) -> usize {
        self.stage_constraints.iter().map(|c| c.rows()).sum::<usize>() + self.terminal_constraint.rows()
    }

    /// Replaces every quadratic weight block by its symmetric part.
    pub fn symmetrize_weights(&mut self) {
        for c in &mut self.stage_costs {
            c.state_weight = symmetric_part(&c.state_weight);
            c.control_weight = symmetric_part(&c.control_weight);
        }
        self.terminal_cost.state_weight = symmetric_part(&self.terminal_cost.state_weight);
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

pub(crate) fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.is_square() {
        (a + a.transpose()) * 0.5
    } else {
        a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    EmptyHorizon,
    ZeroDimension,
    DimensionMismatch,
    NonFinite,
    QxxNotSymmetric,
    QuuNotSymmetric,
    QuuNotPd,
    CostNotConvex,
    TerminalNotPsd,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::EmptyHorizon => "EMPTY_HORIZON",
            Self::ZeroDimension => "ZERO_DIMENSION",
            Self::DimensionMismatch => "DIMENSION_MISMATCH",
            Self::NonFinite => "NON_FINITE",
            Self::QxxNotSymmetric => "QXX_NOT_SYMMETRIC",
            Self::QuuNotSymmetric => "QUU_NOT_SYMMETRIC",
            Self::QuuNotPd => "QUU_NOT_PD",
            Self::CostNotConvex => "COST_NOT_CONVEX",
            Self::TerminalNotPsd => "TERMINAL_NOT_PSD",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Stage index; the terminal stage is reported as `T`, problem-wide
    /// issues as `None`.
    pub stage: Option<usize>,
    pub code: ViolationCode,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "stage {s}: {} ({})", self.code, self.detail),
            None => write!(f, "{} ({})", self.code, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, stage: Option<usize>, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.stage == stage && v.code == code)
    }

    pub fn contains_code(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, stage: Option<usize>, code: ViolationCode, detail: impl Into<String>) {
        self.violations.push(Violation {
            stage,
            code,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn scale(a: &DMatrix<f64>) -> f64 {
    a.amax().max(1.0)
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let tol = SYMMETRY_TOL * scale(a);
    (a - a.transpose()).amax() <= tol
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetric_part(a)).eigenvalues.min()
}

struct ShapeCheck<'a> {
    report: &'a mut ValidationReport,
    stage: Option<usize>,
    ok: bool,
}

impl ShapeCheck<'_> {
    fn matrix(&mut self, name: &str, a: &DMatrix<f64>, rows: usize, cols: usize) {
        if a.shape() != (rows, cols) {
            self.ok = false;
            self.report.push(
                self.stage,
                ViolationCode::DimensionMismatch,
                format!("{name} is {}x{}, expected {rows}x{cols}", a.nrows(), a.ncols()),
            );
        } else if a.iter().any(|v| !v.is_finite()) {
            self.ok = false;
            self.report.push(
                self.stage,
                ViolationCode::NonFinite,
                format!("{name} has non-finite entries"),
            );
        }
    }

    fn vector(&mut self, name: &str, v: &DVector<f64>, len: usize) {
        if v.len() != len {
            self.ok = false;
            self.report.push(
                self.stage,
                ViolationCode::DimensionMismatch,
                format!("{name} has length {}, expected {len}", v.len()),
            );
        } else if v.iter().any(|x| !x.is_finite()) {
            self.ok = false;
            self.report.push(
                self.stage,
                ViolationCode::NonFinite,
                format!("{name} has non-finite entries"),
            );
        }
    }
}

/// Checks shapes, finiteness, symmetry and the convexity assumptions
/// (`Quu` positive definite, `Qxx - Qux' Quu^-1 Qux` and `Qxx_T` positive
/// semi-definite). Violations come out ordered by stage, terminal last.
pub fn validate(p: &LqrProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (n, m, horizon) = (p.n, p.m, p.horizon);
    if horizon == 0 {
        report.push(None, ViolationCode::EmptyHorizon, "horizon T must be at least 1");
    }
    if n == 0 || m == 0 {
        report.push(
            None,
            ViolationCode::ZeroDimension,
            format!("n = {n}, m = {m}; both must be at least 1"),
        );
        return report;
    }
    for (name, len) in [
        ("stage_costs", p.stage_costs.len()),
        ("dynamics", p.dynamics.len()),
        ("stage_constraints", p.stage_constraints.len()),
    ] {
        if len != horizon {
            report.push(
                None,
                ViolationCode::DimensionMismatch,
                format!("{name} has {len} entries, expected {horizon}"),
            );
        }
    }
    if p.x_init.len() != n {
        report.push(
            None,
            ViolationCode::DimensionMismatch,
            format!("x_init has length {}, expected {n}", p.x_init.len()),
        );
    } else if p.x_init.iter().any(|v| !v.is_finite()) {
        report.push(None, ViolationCode::NonFinite, "x_init has non-finite entries");
    }

    for t in 0..horizon {
        let mut chk = ShapeCheck {
            report: &mut report,
            stage: Some(t),
            ok: true,
        };
        let cost = p.stage_costs.get(t);
        if let Some(c) = cost {
            chk.matrix("state_weight", &c.state_weight, n, n);
            chk.matrix("control_weight", &c.control_weight, m, m);
            chk.matrix("cross_weight", &c.cross_weight, m, n);
            chk.vector("state_linear", &c.state_linear, n);
            chk.vector("control_linear", &c.control_linear, m);
        }
        let cost_ok = chk.ok;
        if let Some(d) = p.dynamics.get(t) {
            chk.matrix("dynamics.state_map", &d.state_map, n, n);
            chk.matrix("dynamics.control_map", &d.control_map, n, m);
            chk.vector("dynamics.drift", &d.drift, n);
        }
        if let Some(g) = p.stage_constraints.get(t) {
            let l = g.offset.len();
            chk.matrix("constraint.state_map", &g.state_map, l, n);
            chk.matrix("constraint.control_map", &g.control_map, l, m);
        }
        if let (Some(c), true) = (cost, cost_ok) {
            check_stage_cost(&mut report, t, c);
        }
    }

    let mut chk = ShapeCheck {
        report: &mut report,
        stage: Some(horizon),
        ok: true,
    };
    chk.matrix("terminal.state_weight", &p.terminal_cost.state_weight, n, n);
    chk.vector("terminal.state_linear", &p.terminal_cost.state_linear, n);
    let terminal_ok = chk.ok;
    let l = p.terminal_constraint.offset.len();
    chk.matrix("terminal_constraint.state_map", &p.terminal_constraint.state_map, l, n);
    if terminal_ok {
        let q = &p.terminal_cost.state_weight;
        if !is_symmetric(q) {
            report.push(
                Some(horizon),
                ViolationCode::QxxNotSymmetric,
                "terminal state_weight is not symmetric",
            );
        }
        let lam = min_eigenvalue(q);
        if lam < -PSD_SLACK * scale(q) {
            report.push(
                Some(horizon),
                ViolationCode::TerminalNotPsd,
                format!("terminal state_weight min eigenvalue {lam:.3e}"),
            );
        }
    }
    report
}

fn check_stage_cost(report: &mut ValidationReport, t: usize, c: &StageCost) {
    let stage = Some(t);
    if !is_symmetric(&c.state_weight) {
        report.push(stage, ViolationCode::QxxNotSymmetric, "state_weight is not symmetric");
    }
    if !is_symmetric(&c.control_weight) {
        report.push(stage, ViolationCode::QuuNotSymmetric, "control_weight is not symmetric");
    }
    let quu = symmetric_part(&c.control_weight);
    let lam = min_eigenvalue(&quu);
    if lam.is_nan() || lam <= 0.0 {
        report.push(
            stage,
            ViolationCode::QuuNotPd,
            format!("control_weight min eigenvalue {lam:.3e}"),
        );
        return;
    }
    let Some(chol) = quu.clone().cholesky() else {
        report.push(
            stage,
            ViolationCode::QuuNotPd,
            "control_weight Cholesky factorization failed",
        );
        return;
    };
    let schur = symmetric_part(&c.state_weight) - c.cross_weight.tr_mul(&chol.solve(&c.cross_weight));
    let lam = min_eigenvalue(&schur);
    let tol = PSD_SLACK * scale(&c.state_weight).max(scale(&quu));
    if lam < -tol {
        report.push(
            stage,
            ViolationCode::CostNotConvex,
            format!("Qxx - Qux' Quu^-1 Qux min eigenvalue {lam:.3e}"),
        );
    }
}

/// Parameters of the double-integrator waypoint problem: minimize the sum of
/// squared controls while passing through a waypoint and ending at a
/// terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    pub dt: f64,
    pub horizon: usize,
    pub x_init: [f64; 2],
    pub waypoint_stage: usize,
    pub waypoint: [f64; 2],
    pub terminal: [f64; 2],
}

impl Default for DoubleIntegrator {
    /// One second at `dt = 0.01`: start at (1, 1), pass (-1, -1) halfway,
    /// stop at the origin.
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 100,
            x_init: [1.0, 1.0],
            waypoint_stage: 50,
            waypoint: [-1.0, -1.0],
            terminal: [0.0, 0.0],
        }
    }
}

impl DoubleIntegrator {
    pub fn build(&self) -> Result<LqrProblem, ProblemError> {
        build_double_integrator(
            self.dt,
            self.horizon,
            self.x_init,
            (self.waypoint_stage, self.waypoint),
            self.terminal,
        )
    }
}

/// Position/velocity double integrator with objective `sum |u_t|^2`
/// (control weight 2 under the half-quadratic convention), a state
/// waypoint and a terminal state constraint.
pub fn build_double_integrator(
    dt: f64,
    horizon: usize,
    x_init: [f64; 2],
    waypoint: (usize, [f64; 2]),
    terminal: [f64; 2],
) -> Result<LqrProblem, ProblemError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ProblemError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if horizon < 2 {
        return Err(ProblemError::InvalidInput(format!(
            "horizon must be at least 2, got {horizon}"
        )));
    }
    let (wp_stage, wp) = waypoint;
    if wp_stage == 0 || wp_stage >= horizon {
        return Err(ProblemError::InvalidInput(format!(
            "waypoint stage {wp_stage} must lie strictly between 0 and {horizon}"
        )));
    }
    let (n, m) = (2, 1);
    let mut p = LqrProblem::blank(n, m, horizon);
    let dyn_t = StageDynamics {
        state_map: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        control_map: DMatrix::from_row_slice(2, 1, &[0.0, dt]),
        drift: DVector::zeros(2),
    };
    for t in 0..horizon {
        p.dynamics[t] = dyn_t.clone();
        p.stage_costs[t].control_weight = DMatrix::from_element(1, 1, 2.0);
    }
    p.stage_constraints[wp_stage] = StageConstraint::pin_state(&DVector::from_row_slice(&wp), m);
    p.terminal_constraint = TerminalConstraint::pin_state(&DVector::from_row_slice(&terminal));
    p.x_init = DVector::from_row_slice(&x_init);
    Ok(p)
}
