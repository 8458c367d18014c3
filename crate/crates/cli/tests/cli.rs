//! End-to-end runs of the `oppsyn` binary on the sample inputs in `data/`.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn oppsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oppsyn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr carries a JSON error")
}

fn path_str(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_reports_harmonics_and_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let pattern = data("recovered_d8_m09.json");
    let problem = data("five_level_d8_m09.json");
    let out = oppsyn(&[
        "eval",
        path_str(&pattern),
        path_str(&problem),
        "--trajectory",
        path_str(&csv),
        "--points",
        "400",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    let b3 = report["fourier"]["3"].as_f64().unwrap();
    assert!((b3 + 3.3787e-3).abs() < 1e-6, "b3 = {b3}");
    assert!(report["quality"].as_f64().unwrap() > 0.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,u,i,i_minus_ref"));
    assert_eq!(lines.count(), 400);
}

#[test]
fn mismatched_pattern_is_invalid_input() {
    let pattern = data("recovered_d8_m09.json");
    let problem = data("five_level_d2_m05.json");
    let out = oppsyn(&["eval", path_str(&pattern), path_str(&problem)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "invalid_input");
    let message = err["message"].as_str().unwrap();
    assert!(message.contains('8') && message.contains('2'), "{message}");
}

#[test]
fn malformed_problem_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"levels\": [").unwrap();
    let out = oppsyn(&["bound", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "invalid_input");
}

#[test]
fn infeasible_cell_exits_with_three() {
    let out = oppsyn(&["bound", path_str(&data("five_level_d1_m06.json"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bound_reports_q_and_exports_sdpa() {
    let dir = tempfile::tempdir().unwrap();
    let sdpa = dir.path().join("d2.dat-s");
    let problem = data("five_level_d2_m05.json");
    let out = oppsyn(&["bound", path_str(&problem), "--sdpa-out", path_str(&sdpa)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = stdout_json(&out);
    assert_eq!(report["status"], "optimal");
    let q = report["q_beta"].as_f64().unwrap();
    assert!(q > 0.0 && q < 0.1, "q = {q}");
    let cp = oppsyn::sdp::sdpa::read_problem(&sdpa).unwrap();
    assert_eq!(cp.num_vars as u64, report["num_vars"].as_u64().unwrap());

    let only = dir.path().join("d2-only.dat-s");
    let out = oppsyn(&[
        "bound",
        path_str(&problem),
        "--beta",
        "3",
        "--sdpa-out",
        path_str(&only),
        "--export-only",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["beta"], 3);
    assert!(only.exists());
}

#[test]
fn synth_round_trips_through_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = dir.path().join("pattern.json");
    let cert = dir.path().join("cert.json");
    let trace = dir.path().join("trace.csv");
    let problem = data("five_level_d2_m05.json");
    let out = oppsyn(&[
        "synth",
        path_str(&problem),
        "--pattern-out",
        path_str(&pattern),
        "--certificate-out",
        path_str(&cert),
        "--trace-out",
        path_str(&trace),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result = stdout_json(&out);
    let gap = result["certificate"]["gap"].as_f64().unwrap();
    assert!(gap >= -1e-7, "gap {gap}");
    assert!(std::fs::read_to_string(&trace)
        .unwrap()
        .starts_with("start,iteration,objective,max_violation"));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert_eq!(saved, result["certificate"]);

    let out = oppsyn(&["eval", path_str(&pattern), path_str(&problem)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["feasible"], true);

    let out = oppsyn(&[
        "synth",
        path_str(&problem),
        "--warm-start",
        path_str(&pattern),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let again = stdout_json(&out);
    let q0 = result["certificate"]["q_refined"].as_f64().unwrap();
    let q1 = again["certificate"]["q_refined"].as_f64().unwrap();
    assert!(q1 <= q0 + 1e-12, "{q1} vs {q0}");
}

#[test]
fn sweep_writes_ordered_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = oppsyn(&[
        "sweep",
        path_str(&data("five_level_d2_m05.json")),
        "--d-range",
        "1:2",
        "--m-range",
        "0.6,0.8",
        "--out",
        path_str(&csv),
        "--threads",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows[0].join(","),
        "d,M,beta,status,q_bound,q_rec,gap,prep_s,solve_s"
    );
    let cells: Vec<(&str, &str)> = rows[1..].iter().map(|r| (r[0], r[1])).collect();
    assert_eq!(
        cells,
        vec![("1", "0.6"), ("1", "0.8"), ("2", "0.6"), ("2", "0.8")]
    );
    assert_eq!(rows[1][3], "infeasible");
    assert!(rows[1][4].is_empty());
    for row in &rows[1..] {
        assert_eq!(row.len(), 9);
        if row[3] == "optimal" {
            let q_bound: f64 = row[4].parse().unwrap();
            let q_rec: f64 = row[5].parse().unwrap();
            assert!(q_rec >= q_bound - 1e-7);
        }
    }
}

#[test]
fn graph_counts_for_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("n3.json");
    std::fs::write(
        &problem,
        r#"{ "levels": [-1, 0, 1], "pulse_number": 2, "interlock": 0.0314, "modulation_index": 0.5 }"#,
    )
    .unwrap();
    let prefix = dir.path().join("g");
    let out = oppsyn(&[
        "graph",
        path_str(&problem),
        "--dot-prefix",
        path_str(&prefix),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let g = stdout_json(&out);
    assert_eq!(g["multipolar"]["counts"]["vertices"], 4);
    assert_eq!(g["multipolar"]["counts"]["edges"], 4);
    assert_eq!(g["unipolar"]["counts"]["vertices"], 3);
    assert_eq!(g["unipolar"]["counts"]["edges"], 2);
    assert!(dir.path().join("g-multipolar.dot").exists());
    assert!(std::fs::read_to_string(dir.path().join("g-unipolar.dot"))
        .unwrap()
        .starts_with("digraph"));
}
