use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_batteryless"));
    cmd.env("RUST_LOG", "error");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn airtime_prints_seconds() {
    let o = run(&["airtime", "--sf", "7", "--pl", "16"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.046336");
    let o = run(&["airtime", "--sf", "12", "--pl", "1"]);
    assert_eq!(stdout(&o).trim(), "0.663552");
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let args = [
        "simulate", "--seed", "7", "--n", "300", "--m", "5", "--p1", "0.5", "--p2", "0.5",
    ];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    assert_eq!(a, b);
    assert!(a.starts_with("pdr="), "{a}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["chain", "--threshold", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--p1", "2"]).status.code(), Some(2));
    assert_eq!(run(&["airtime", "--sf", "13"]).status.code(), Some(2));
    assert_eq!(
        run(&["min-cap", "--axis", "bogus", "--values", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["chain", "--capacitance", "1e-5"]).status.code(), Some(3));
    assert_eq!(run(&["bogus-command"]).status.code(), Some(2));
    let o = run(&["chain", "--scenario", "/nonexistent/file.toml"]);
    assert!(!o.status.success());
}

#[test]
fn trace_header_and_first_point() {
    let o = run(&["trace"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("time_s,voltage_v,state"));
    assert_eq!(lines.next(), Some("0,2.31,Tx"));
}

#[test]
fn min_cap_sweep_table() {
    let o = run(&[
        "min-cap",
        "--dl-case",
        "rx2",
        "--axis",
        "ul_payload",
        "--values",
        "16,32",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines[0], "axis,x,dl_case,min_capacitance_f,feasible");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ul_payload,16,rx2,"));
    assert!(lines[1].ends_with(",true"));
}

#[test]
fn sweep_writes_json_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let o = run(&[
        "--json",
        "--jobs",
        "2",
        "--out",
        path.to_str().unwrap(),
        "sweep",
        "--thresholds",
        "0.6:0.7:0.05",
        "--engine",
        "chain",
        "--granularity",
        "100",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(body.trim_start().starts_with('['));
    assert_eq!(body.matches("\"threshold\"").count(), 3);
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let p = path.to_str().unwrap();
    let first = run(&["chain", "--sf", "9", "--m", "45", "--p1", "0.3", "--dump-config", p]);
    assert!(first.status.success());
    let again = run(&["chain", "--scenario", p]);
    assert_eq!(stdout(&first), stdout(&again));
}

#[test]
fn scenario_dir_env_resolves_relative_paths() {
    let o = bin()
        .current_dir(std::env::temp_dir())
        .env("BATTERYLESS_SCENARIO_DIR", scenarios_dir())
        .args(["chain", "--scenario", "case_c.toml", "--granularity", "100"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn wakeup_matches_closed_form() {
    let o = run(&["wakeup", "--power", "0.1", "--thresholds", "0.56"]);
    let out = stdout(&o);
    let row = out.lines().nth(1).unwrap();
    let t: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    // r_i = 3.3² / 0.1, R_eq = r_i ∥ 600 kΩ, v(t) from 1.8 V up to 0.56·3.3 V.
    let ri = 3.3f64 * 3.3 / 0.1;
    let req = ri * 600e3 / (ri + 600e3);
    let vinf = 3.3 * req / ri;
    let expected = -req * 4.7e-3 * ((vinf - 0.56 * 3.3) / (vinf - 1.8)).ln();
    assert!((t - expected).abs() < 1e-6, "{t} vs {expected}");
}
