use std::process::Command;

fn pevgrid(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pevgrid")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn validate_passes_on_bundled_data() {
    let (code, stdout, _) = pevgrid(&["validate"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("0 failed"));
    let (code, _, _) = pevgrid(&["run", "--mode", "validate"]);
    assert_eq!(code, 0);
}

#[test]
fn bad_flags_exit_with_config_error() {
    let (code, _, stderr) = pevgrid(&["run", "--mu1", "-1"]);
    assert_eq!(code, 2, "{stderr}");
    let (code, _, _) = pevgrid(&["run", "--case", "no-such-case", "--per-station", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn unservable_fleet_exits_with_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let fleet = dir.path().join("fleet.json");
    // Five slots of demand inside a two-slot window.
    std::fs::write(
        &fleet,
        r#"[{"id": 0, "station": 1, "pev_index": 0, "arrival": 0, "departure": 1,
             "capacity_kwh": 62.5, "initial_soc": 0.2, "rate_kw": 20.0,
             "efficiency": 1.0, "required_slots": 5}]"#,
    )
    .unwrap();
    let (code, _, stderr) = pevgrid(&["run", "--case", "case3", "--fleet", fleet.to_str().unwrap()]);
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.contains("task 0"));
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("dyn");
    let s = dir.path().join("static");
    let other = dir.path().join("other");
    let common = ["--case", "case3", "--tasks", "2", "--slots", "5", "--seed", "8"];
    for (out, mode) in [(&d, "dynamic"), (&s, "static")] {
        let mut args = vec!["run", "--mode", mode, "--out", out.to_str().unwrap()];
        args.extend(common);
        let (code, stdout, stderr) = pevgrid(&args);
        assert_eq!(code, 0, "{stderr}");
        assert!(stdout.contains("stage-1") && stdout.contains("case3"));
    }
    let (code, stdout, _) = pevgrid(&["compare", d.join("report.json").to_str().unwrap(), s.join("report.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("gap"));
    let (code, _, _) = pevgrid(&[
        "run", "--case", "case3", "--tasks", "2", "--slots", "5", "--seed", "9", "--mode", "static", "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (code, _, stderr) = pevgrid(&["compare", d.join("report.json").to_str().unwrap(), other.join("report.json").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("seed"));
}

#[test]
fn oracle_reports_a_small_gap() {
    let (code, stdout, stderr) = pevgrid(&["oracle", "--seed", "2"]);
    assert_eq!(code, 0, "{stderr}");
    let gap: f64 = stdout
        .lines()
        .find(|l| l.starts_with("relative gap"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap.abs() <= 1e-2);
}
