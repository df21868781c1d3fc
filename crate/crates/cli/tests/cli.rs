use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cli(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpn-reserve"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn bellman_run_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["bellman"], &scenario("three_site.toml"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"bellman\""));
    assert!(manifest.contains("seed = 1"));
    let csv = std::fs::read_to_string(dir.path().join("bellman_trajectory.csv")).unwrap();
    assert!(csv.starts_with("vpn,site,epoch,state,x_first,x_rest,action,b_first,b_rest,cost\n"));
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(cli(&["pg", "--seed", "9"], &scenario("three_site.toml"), &a).status.success());
    assert!(cli(&["pg"], &scenario("three_site.toml"), &b).status.success());
    let ma = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(ma.contains("seed = 9"));
    assert_ne!(
        std::fs::read(a.join("pg_trace.csv")).unwrap(),
        std::fs::read(b.join("pg_trace.csv")).unwrap()
    );
}

#[test]
fn invalid_scenario_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "alpha = 1.0\n[[vpn]]\nt_out = [1.0, -2.0]\n").unwrap();
    let out = cli(&["stationary"], &path, &dir.path().join("out"));
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "scenario");
    assert_eq!(err["command"], "stationary");
    assert!(err["message"].as_str().unwrap().contains("vpn[0].t_out[1]"));
}

#[test]
fn oversized_game_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["game"], &scenario("mpls.toml"), dir.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "solver");
}

#[test]
fn unknown_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["solve"], &scenario("three_site.toml"), dir.path());
    assert!(!out.status.success());
}
