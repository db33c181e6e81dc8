use super::*;
use crate::grid::builtin_case;
use crate::scenario::{LoadTable, Profile, TimeGrid};

fn case3_variant(f: impl FnOnce(&mut serde_json::Value)) -> GridCase {
    let mut v: serde_json::Value = serde_json::from_str(&builtin_case("case3").unwrap().to_json()).unwrap();
    f(&mut v);
    GridCase::from_json(&v.to_string()).unwrap()
}

fn horizon<'g>(grid: &'g GridCase, slots: usize, tasks: Vec<HorizonTask>) -> HorizonProblem<'g> {
    let time = TimeGrid::new(slots, 0.5).unwrap();
    let profile = Profile::flat(slots, 1.0, 0.2);
    let loads = LoadTable::build(grid, &profile, &time).unwrap();
    HorizonProblem::new(grid, &loads, &profile, 0.5, 0..=slots - 1, tasks).unwrap()
}

fn task(id: usize, bus: usize, window: (usize, usize), required: usize) -> HorizonTask {
    HorizonTask {
        task_id: id,
        bus,
        window,
        rate_kw: 20.0,
        energy_per_slot_kwh: 10.0,
        remaining_kwh: 10.0 * required as f64,
        required_slots: required,
    }
}

#[test]
fn no_load_flat_voltage_has_no_generation() {
    let grid = case3_variant(|v| {
        for b in v["buses"].as_array_mut().unwrap() {
            b["base_load_p"] = 0.0.into();
            b["base_load_q"] = 0.0.into();
            b["v_min"] = 1.0.into();
            b["v_max"] = 1.0.into();
        }
        v["generators"][0]["p_min"] = (-0.5).into();
    });
    let hp = horizon(&grid, 1, vec![]);
    let fixed = ChargingSchedule::zeros(vec![], 0, 1, ScheduleMode::Binary);
    let sol = solve_sdr(
        &hp,
        &SdrOptions { tau: TauMode::Fixed(&fixed), angle_limits: true },
        &SolveOptions::tight(),
    )
    .unwrap();
    assert!(sol.pg[0][0].abs() < 1e-6, "{:?}", sol.pg);
    assert!(sol.qg[0][0].abs() < 1e-6);
    let v = recover_voltage(&sol.w[0]);
    for z in &v {
        assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-4, "{v:?}");
    }
}

#[test]
fn case9_window_has_one_block_per_slot_and_a_variable_per_window_slot() {
    let grid = builtin_case("case9").unwrap();
    let stations: Vec<usize> = grid.stations().iter().map(|b| grid.bus_index(*b).unwrap()).collect();
    let tasks = vec![
        task(0, stations[0], (0, 9), 8),
        task(1, stations[1], (2, 11), 8),
        task(2, stations[2], (1, 10), 4),
    ];
    let hp = horizon(&grid, 12, tasks);
    let (prog, layout) = build_sdr(&hp, &SdrOptions::default()).unwrap();
    assert_eq!(layout.blocks.len(), 12);
    assert!(layout.blocks.iter().all(|b| b.n == 9));
    assert_eq!(prog.num_hermitian_blocks(), 12);
    assert_eq!(layout.tau_vars().count(), hp.binary_variable_count());
    assert_eq!(hp.binary_variable_count(), 10 + 10 + 10);
}

#[test]
fn sdr_objective_is_additive_over_slots() {
    let grid = builtin_case("case3").unwrap();
    let one = solve_sdr(&horizon(&grid, 1, vec![]), &SdrOptions::default(), &SolveOptions::tight()).unwrap();
    let three = solve_sdr(&horizon(&grid, 3, vec![]), &SdrOptions::default(), &SolveOptions::tight()).unwrap();
    assert!((three.total_cost() - 3.0 * one.total_cost()).abs() < 1e-6 * three.total_cost());
    for c in &three.generation_cost {
        assert!((c - one.generation_cost[0]).abs() < 1e-5);
    }
    assert!((three.solver.objective - three.total_cost()).abs() < 1e-5 * three.total_cost());
}

#[test]
fn relaxed_charging_meets_demand() {
    let grid = builtin_case("case3").unwrap();
    let hp = horizon(&grid, 4, vec![task(7, 0, (0, 3), 2)]);
    let sol = solve_sdr(&hp, &SdrOptions::default(), &SolveOptions::tight()).unwrap();
    assert!(sol.tau.row_sum(0) * 10.0 >= 20.0 - 1e-6);
    assert!(sol.tau.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn fixed_schedule_must_match_the_horizon() {
    let grid = builtin_case("case3").unwrap();
    let hp = horizon(&grid, 4, vec![task(7, 0, (1, 3), 2)]);
    let mut s = ChargingSchedule::zeros(vec![7], 0, 4, ScheduleMode::Binary);
    s.set(0, 0, 1.0);
    s.set(0, 1, 1.0);
    let err = build_sdr(&hp, &SdrOptions { tau: TauMode::Fixed(&s), angle_limits: true }).unwrap_err();
    assert!(err.to_string().contains("outside its window"), "{err}");
    let short = ChargingSchedule::zeros(vec![7], 0, 4, ScheduleMode::Binary);
    assert!(matches!(
        build_sdr(&hp, &SdrOptions { tau: TauMode::Fixed(&short), angle_limits: true }),
        Err(Error::Infeasible(_))
    ));
}

#[test]
fn infeasible_window_is_reported() {
    let grid = builtin_case("case3").unwrap();
    let time = TimeGrid::new(4, 0.5).unwrap();
    let profile = Profile::flat(4, 1.0, 0.2);
    let loads = LoadTable::build(&grid, &profile, &time).unwrap();
    let err = HorizonProblem::new(&grid, &loads, &profile, 0.5, 0..=3, vec![task(3, 0, (2, 3), 3)]).unwrap_err();
    assert!(matches!(err, Error::Infeasible(ref m) if m.contains("task 3")), "{err}");
}

#[test]
fn balance_residual_of_empty_network_is_zero() {
    let grid = GridCase::from_json(
        r#"{"base_mva": 1.0,
            "buses": [{"id": 1, "v_min": 0.9, "v_max": 1.1, "base_load_p": 0.0, "base_load_q": 0.0}],
            "lines": [],
            "generators": [{"bus": 1, "p_min": 0.0, "p_max": 1.0, "q_min": -1.0, "q_max": 1.0,
                            "cost": {"c2": 0.0, "c1": 1.0, "c0": 0.0}}]}"#,
    )
    .unwrap();
    let r = recovered_balance_residual(&grid, &[Complex64::new(1.0, 0.0)], &[0.0], &[0.0], &[0.0], &[0.0], &[0.0]).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn balance_residual_detects_a_perturbed_voltage() {
    let grid = builtin_case("case3").unwrap();
    let hp = horizon(&grid, 1, vec![]);
    let sol = solve_sdr(&hp, &SdrOptions::default(), &SolveOptions::tight()).unwrap();
    let v = recover_voltage(&sol.w[0]);
    let args = |v: &[Complex64]| {
        recovered_balance_residual(&grid, v, &sol.pg[0], &sol.qg[0], &hp.load_p[0], &hp.load_q[0], &[0.0; 3]).unwrap()
    };
    let exact = args(&v);
    assert!(exact < 1e-5, "{exact}");
    let mut bumped = v.clone();
    bumped[1] += Complex64::new(0.1, 0.0);
    assert!(args(&bumped) > 1e-3);
    // A global phase rotation changes nothing.
    let rot = Complex64::from_polar(1.0, 0.7);
    let rotated: Vec<Complex64> = v.iter().map(|z| z * rot).collect();
    assert!((args(&rotated) - exact).abs() < 1e-12);
}

#[test]
fn voltage_recovery_normalizes_phase() {
    let v = [Complex64::from_polar(1.02, 0.4), Complex64::from_polar(0.98, 0.1)];
    let w = DMatrix::from_fn(2, 2, |i, j| v[i] * v[j].conj());
    let rec = recover_voltage(&w);
    assert!(rec[0].im.abs() < 1e-12 && rec[0].re > 0.0);
    assert!((rec[0].norm() - 1.02).abs() < 1e-12);
    assert!((rec[1] - Complex64::from_polar(0.98, -0.3)).norm() < 1e-12);
}
