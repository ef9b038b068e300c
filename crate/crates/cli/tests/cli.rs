use std::process::{Command, Output};

fn coopdrive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopdrive"))
        .args(args)
        .env_remove("COOPDRIVE_SCENARIO_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn validate_accepts_bundled_names() {
    let out = coopdrive(&["validate", "occluded_ped"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ok"));
}

#[test]
fn validate_rejects_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nversion = 1\n").unwrap();
    let out = coopdrive(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_scenario_is_an_io_error() {
    let out = coopdrive(&["validate", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = coopdrive(&["run", "--scenario", "occluded_ped", "--warp-drive"]);
    assert_eq!(out.status.code(), Some(1));
    let out = coopdrive(&["run", "--scenario", "occluded_ped", "--strategy", "telepathy"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = coopdrive(&[
        "run",
        "--scenario",
        "occluded_ped",
        "--strategy",
        "codriving_driving_request",
        "--bandwidth-log2",
        "6",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["strategy"], "codriving_driving_request");
    assert!(v["global"]["ds"].as_f64().is_some());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let out = coopdrive(&["run", "--scenario", "occluded_ped", "--out", "/definitely/not/here/r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_parameter_is_a_config_error() {
    let out = coopdrive(&["run", "--scenario", "occluded_ped", "--latency-ms", "-10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_csv_rows() {
    let out = coopdrive(&[
        "sweep",
        "--scenario",
        "occluded_ped",
        "--axis",
        "latency",
        "--values",
        "0,200",
        "--strategies",
        "no_fusion",
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("strategy,bandwidth_log2,latency_ms,pose_sigma,seed,DS"));
    assert_eq!(lines.len(), 1 + 2 + 2);
    assert!(lines[1..].iter().all(|l| l.starts_with("no_fusion,")));
}

#[test]
fn stats_prints_one_line_per_threshold() {
    let out = coopdrive(&["stats", "--scenario", "occluded_ped", "--delta-w", "1,2,5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}
