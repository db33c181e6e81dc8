use super::*;
use clap::Parser;

#[derive(Parser)]
struct Wrap {
    #[command(flatten)]
    args: RunArgs,
}

fn parse(argv: &[&str]) -> RunArgs {
    Wrap::try_parse_from(std::iter::once("x").chain(argv.iter().copied())).unwrap().args
}

fn toy(seed: u64) -> RunConfig {
    RunConfig {
        case: "case3".into(),
        toy: Some(ToySpec { tasks: 2, slots: 4 }),
        fleet: FleetParams {
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"case": "case14", "controller": {"mu1": 3.0}}"#).unwrap();
    let p = path.to_str().unwrap();
    let cfg = parse(&["--config", p, "--mu2", "7", "--exponent-L", "2", "--seed", "9"])
        .resolve(RunConfig::default())
        .unwrap();
    assert_eq!(cfg.case, "case14");
    assert_eq!(cfg.controller.mu1, 3.0);
    assert_eq!(cfg.controller.mu2, 7.0);
    assert_eq!(cfg.controller.exponent, 2.0);
    assert_eq!(cfg.seed(), 9);
    // Untouched fields keep their defaults.
    assert_eq!(cfg.controller.epsilon, 1e-4);
    assert_eq!(cfg.profile, "profile2");
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let err = parse(&["--exponent-L", "1.0"]).resolve(RunConfig::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"bogus": 1}"#).unwrap();
    let err = parse(&["--config", path.to_str().unwrap()]).resolve(RunConfig::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    assert_eq!(exit_code(&Error::Solver("x".into())), 3);
    assert_eq!(exit_code(&Error::Infeasible("x".into())), 4);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(6);
    cfg.mode = RunMode::Static;
    cfg.out = Some(dir.path().to_path_buf());
    let first = cmd_run(&cfg).unwrap();
    for f in ["config.json", "report.json", "schedule.csv", "generation.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let echo = RunConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(echo, cfg);
    let again = cmd_run(&RunConfig { out: None, ..echo }).unwrap();
    assert_eq!(first.without_timing(), again.without_timing());
    let loaded = load_report(dir.path().join("report.json")).unwrap();
    assert_eq!(loaded.without_timing(), first.without_timing());
}

#[test]
fn comparison_needs_matching_seeds() {
    let a = cmd_run(&RunConfig {
        mode: RunMode::Static,
        ..toy(2)
    })
    .unwrap();
    let same = cmd_compare(&a, &a).unwrap();
    assert_eq!(same.gap, 0.0);
    assert_eq!(same.slot_costs.len(), 4);
    let b = cmd_run(&RunConfig {
        mode: RunMode::Static,
        ..toy(3)
    })
    .unwrap();
    assert!(matches!(cmd_compare(&a, &b), Err(Error::Config(_))));
}

#[test]
fn empty_fleet_pair_has_no_gap() {
    let base = RunConfig {
        case: "case3".into(),
        num_slots: 3,
        fleet: FleetParams {
            pevs_per_station: 0,
            ..Default::default()
        },
        ..Default::default()
    };
    let d = cmd_run(&base).unwrap();
    let s = cmd_run(&RunConfig {
        mode: RunMode::Static,
        ..base
    })
    .unwrap();
    let c = cmd_compare(&d, &s).unwrap();
    assert!(c.gap.abs() <= 1e-6 * c.static_total, "{c:?}");
}

#[test]
fn summary_follows_the_table_columns() {
    let r = cmd_run(&RunConfig {
        mode: RunMode::Static,
        ..toy(4)
    })
    .unwrap();
    let table = summary_table(&[("case3", &r)]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(&header[..7], &["case", "mode", "binary", "mu1", "mu2", "stage-1", "stage-2"]);
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[2], r.binary_variable_count.to_string());
}

#[test]
fn voltage_distance_ignores_global_phase() {
    let a = vec![Complex64::new(1.0, 0.0), Complex64::from_polar(0.98, -0.1)];
    let rot = Complex64::from_polar(1.0, 2.0);
    let b: Vec<Complex64> = a.iter().map(|z| z * rot).collect();
    assert!(voltage_distance(&a, &b) < 1e-12);
    let mut c = b.clone();
    c[1] *= 1.01;
    assert!((voltage_distance(&a, &c) - 0.0098).abs() < 1e-9);
}
