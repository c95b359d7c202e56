//! End-to-end checks of the command-line tool.

use std::path::PathBuf;
use std::process::{Command, Output};

fn coopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopt"))
        .args(args)
        .output()
        .expect("run coopt")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("coopt-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulated(name: &str, scenario: &str) -> String {
    let path = scratch(name);
    let p = path.to_str().unwrap();
    let o = coopt(&["simulate", "--scenario", scenario, "--n1", "25", "--n2", "25", "--seed", "4", "--out", p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p.to_string()
}

#[test]
fn simulate_is_reproducible() {
    let a = std::fs::read_to_string(simulated("a.csv", "beta-distance")).unwrap();
    let b = std::fs::read_to_string(simulated("b.csv", "beta-distance")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("x1,group"));
    assert_eq!(a.lines().count(), 51);
}

#[test]
fn test_prints_gamma_post_and_writes_json() {
    let data = simulated("t.csv", "beta-distance");
    let out = scratch("t.json");
    let o = coopt(&["test", "--input", &data, "--group", "group", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let line = stdout(&o);
    let g: f64 = line.trim().strip_prefix("gamma_post ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&g));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(json.get("params").is_some());
}

#[test]
fn hmap_renders_tree() {
    let data = simulated("h.csv", "beta-distance");
    let o = coopt(&["hmap", "--input", &data, "--group", "group"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("gamma="), "{text}");
}

#[test]
fn distance_draws_are_in_range() {
    let data = simulated("d.csv", "beta-distance");
    let o = coopt(&["distance", "--input", &data, "--group", "group", "--draws", "10", "--metric", "l1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let values: Vec<f64> = text
        .lines()
        .filter_map(|l| l.trim().parse().ok())
        .collect();
    assert_eq!(values.len(), 10);
    assert!(values.iter().all(|v| (0.0..=2.0).contains(v)));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mean"));
}

#[test]
fn gof_prints_rho_post() {
    let path = scratch("g.csv");
    std::fs::write(&path, "x\n0.1\n0.2\n0.35\n0.8\n0.55\n").unwrap();
    let o = coopt(&["gof", "--input", path.to_str().unwrap(), "--bounds", "0:1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rho_post"));
}

#[test]
fn missing_file_and_bad_flags_exit_2() {
    let o = coopt(&["test", "--input1", "/no/such.csv", "--input2", "/no/such.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let data = simulated("e.csv", "beta-distance");
    let o = coopt(&["test", "--input", &data, "--group", "group", "--gamma0", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_refuses_large_problems_with_exit_3() {
    let data = simulated("o.csv", "table-indep");
    let o = coopt(&["oracle", "--input", &data, "--group", "group", "--mode", "table"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
