//! End-to-end smoke tests driving the built binary.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgsadmm"))
}

#[test]
fn solve_toy_sdp_exits_zero_and_prints_a_record() {
    let out = bin()
        .args(["solve", "--generate", "toy-sdp", "--tau", "1.618", "--solver", "classic-admm"])
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"status\": \"converged\""));
    assert!(text.contains("\"schema_version\": 1"));
}

#[test]
fn out_of_range_tau_is_rejected_with_exit_one() {
    let out = bin()
        .args(["solve", "--generate", "toy-sdp", "--tau", "2.0"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
}

#[test]
fn iteration_cap_exits_two() {
    let out = bin()
        .args([
            "solve",
            "--generate",
            "sdp:n=6,m=8",
            "--solver",
            "classic-admm",
            "--max-iter",
            "2",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_then_solve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.dat-s");
    let out = bin()
        .args([
            "gen",
            "--generate",
            "sdp:n=5,m=6",
            "--seed",
            "4",
            "--out",
            path.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let out = bin()
        .args([
            "solve",
            "--file",
            path.to_str().unwrap(),
            "--solver",
            "classic-admm",
            "--tau",
            "1.9",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_prints_pass_lines_and_exits_zero() {
    let out = bin()
        .args(["verify", "--seed", "2", "--tau", "1.9"])
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
    assert!(!text.contains("FAIL"));
}

#[test]
fn trace_csv_is_written_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = bin()
        .args([
            "solve",
            "--generate",
            "toy-sdp",
            "--solver",
            "classic-admm",
            "--tau",
            "1.618",
            "--trace",
            path.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,eta_max,eta_gap,sigma,tau,step_x,step_y,step_z,delta,delta_tilde,gamma"
    );
    assert!(lines.count() > 10);
}
