use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clqr::bench::Method;
use clqr::io::{read_bench_csv, read_disturbance_csv, read_penalty_csv, read_policy_json, read_trajectory_csv};
use clqr::simulation::ExecutionMode;
use tempfile::TempDir;

fn clqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clqr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Writes a double-integrator problem file with optional extra generator
/// flags and returns its path.
fn generate(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    let mut args = vec!["gen-double-integrator", "--out", path_str(&path)];
    args.extend_from_slice(extra);
    let out = clqr(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"));
    line[key.len()..].trim().parse().unwrap()
}

#[test]
fn generated_problem_validates() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let out = clqr(&["validate", path_str(&problem)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "valid");
}

#[test]
fn solve_writes_trajectory_and_policy() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let traj = dir.path().join("traj.csv");
    let policy = dir.path().join("policy.json");
    let out = clqr(&[
        "solve",
        path_str(&problem),
        "--out",
        path_str(&traj),
        "--policy",
        path_str(&policy),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(value_after(&stderr(&out), "max residual") < 1e-8);

    let (states, controls) = read_trajectory_csv(File::open(&traj).unwrap()).unwrap();
    assert_eq!((states.len(), controls.len()), (101, 100));
    for (t, want) in [(0, 1.0), (50, -1.0), (100, 0.0)] {
        assert!((states[t][0] - want).abs() < 1e-8, "stage {t}: {}", states[t][0]);
    }
    let policy = read_policy_json(File::open(&policy).unwrap()).unwrap();
    assert!(!policy.infeasible);
    assert_eq!(
        (policy.n, policy.m, policy.horizon, policy.stages.len()),
        (2, 1, 100, 100)
    );
}

#[test]
fn kkt_agrees_with_solve() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(clqr(&["solve", path_str(&problem), "--out", path_str(&a)])
        .status
        .success());
    let out = clqr(&["kkt", path_str(&problem), "--out", path_str(&b)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (xa, _) = read_trajectory_csv(File::open(&a).unwrap()).unwrap();
    let (xb, _) = read_trajectory_csv(File::open(&b).unwrap()).unwrap();
    let gap = xa.iter().zip(&xb).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn contradictory_constraints_exit_infeasible() {
    // From (5, 5) at stage 99 one step cannot reach the origin.
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "bad.json", &["--waypoint-stage", "99", "--waypoint", "5", "5"]);
    let policy = dir.path().join("policy.json");
    let out = clqr(&["solve", path_str(&problem), "--policy", path_str(&policy)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infeasible at stage 99"), "{}", stderr(&out));
    let policy = read_policy_json(File::open(&policy).unwrap()).unwrap();
    assert!(policy.infeasible);
    assert_eq!(policy.infeasible_stage, Some(99));
    assert_eq!(clqr(&["kkt", path_str(&problem)]).status.code(), Some(2));
}

#[test]
fn missing_file_is_an_error() {
    let out = clqr(&["solve", "/nonexistent/problem.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn malformed_file_fails_validation() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"n\": 2,\n \"m\": }").unwrap();
    assert_eq!(clqr(&["validate", path_str(&path)]).status.code(), Some(1));
    assert_eq!(clqr(&["solve", path_str(&path)]).status.code(), Some(1));
}

#[test]
fn penalty_sweep_gap_decreases() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let csv = dir.path().join("penalty.csv");
    let out = clqr(&["penalty-sweep", path_str(&problem), "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_penalty_csv(File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.eps).collect::<Vec<_>>(), [1e-1, 1e-3, 1e-5, 1e-8]);
    assert!(rows.windows(2).all(|w| w[1].gap_inf_norm < w[0].gap_inf_norm));
}

#[test]
fn zero_noise_disturbance_has_equal_modes() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let csv = dir.path().join("disturb.csv");
    let out = clqr(&[
        "disturb",
        path_str(&problem),
        "--sigma",
        "0",
        "--trials",
        "3",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_disturbance_csv(File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for closed in rows.iter().filter(|r| r.mode == ExecutionMode::ClosedLoop) {
        let open = rows
            .iter()
            .find(|r| r.mode == ExecutionMode::OpenLoop && r.trial == closed.trial && r.stage == closed.stage)
            .unwrap();
        assert_eq!(open.residual_inf_norm, closed.residual_inf_norm);
    }
}

#[test]
fn disturbance_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    let run = || clqr(&["disturb", path_str(&problem), "--trials", "5", "--seed", "11"]).stdout;
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

#[test]
fn bench_emits_one_row_per_method_and_horizon() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = clqr(&[
        "bench",
        "--horizons",
        "10,20",
        "--repetitions",
        "2",
        "--n",
        "3",
        "--m",
        "1",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_bench_csv(File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for method in [Method::Clqr, Method::KktDense] {
        let horizons: Vec<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.horizon).collect();
        assert_eq!(horizons, [10, 20]);
    }
    assert!(rows
        .iter()
        .all(|r| r.check_residual < 1e-6 && r.wall_time_seconds > 0.0));
    assert!(stderr(&out).contains("slope clqr"));
}

#[test]
fn invalid_tolerance_is_an_error() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "di.json", &[]);
    assert_eq!(
        clqr(&["solve", path_str(&problem), "--rank-tol", "-1"]).status.code(),
        Some(1)
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(clqr(&["solve"]).status.code(), Some(1));
    assert_eq!(clqr(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(clqr(&["--help"]).status.code(), Some(0));
}
