use std::process::{Command, Output};

fn hbdelay(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbdelay"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn unmatched_input_pattern_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbdelay(dir.path(), &["ingest", "--input", "nothing_*.csv", "--output", "r.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no files match"));
}

#[test]
fn simulate_writes_records_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("small.toml");
    std::fs::write(&scenario, "n_records = 240\nmonths = 36\n").unwrap();
    let out = hbdelay(
        dir.path(),
        &["simulate", "--scenario", "small.toml", "--seed", "5", "--output", "sim.csv", "--design", "gen.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = std::fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(records.lines().count(), 241);
    let truth = std::fs::read_to_string(dir.path().join("sim.truth.json")).unwrap();
    assert!(truth.contains("\"phi\": 35"));
    assert!(dir.path().join("gen.csv").exists());

    let out = hbdelay(
        dir.path(),
        &["ingest", "--input", "sim*.csv", "--threshold", "0", "--min-months", "12", "--output", "records.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("records kept"));
}

#[test]
fn unknown_scenario_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "records_per_day = 3\n").unwrap();
    let out = hbdelay(dir.path(), &["simulate", "--scenario", "bad.toml", "--output", "sim.csv"]);
    assert!(!out.status.success());
}
