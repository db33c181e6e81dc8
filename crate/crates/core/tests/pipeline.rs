use pevgrid::grid::builtin_case;
use pevgrid::mpc::{run_dynamic, run_static, ControllerConfig};
use pevgrid::oracle::oracle_solve;
use pevgrid::scenario::toy_scenario;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn oracle_brackets_the_pipeline(seed in 0u64..1000, slots in 3usize..6) {
        let grid = builtin_case("case3").unwrap();
        let sc = toy_scenario(&grid, 2, slots, seed).unwrap();
        let oracle = oracle_solve(&grid, &sc).unwrap();
        let rep = run_static(&grid, &sc, &ControllerConfig::default()).unwrap();
        let sdr = rep.slots[0].stage1.as_ref().unwrap().sdr_value;
        prop_assert!(sdr <= oracle.cost * (1.0 + 1e-9));
        prop_assert!(oracle.cost <= rep.totals.total_cost * (1.0 + 1e-3));
        // The oracle schedule keeps to every window and meets every count.
        for (i, task) in sc.tasks.iter().enumerate() {
            let row = oracle.schedule.row(i);
            let inside: f64 = (task.arrival..=task.departure).map(|t| row[t]).sum();
            prop_assert_eq!(inside, row.iter().sum::<f64>());
            prop_assert!(inside as usize >= task.required_slots);
        }
    }

    #[test]
    fn applied_schedules_respect_windows(seed in 0u64..1000) {
        let grid = builtin_case("case3").unwrap();
        let sc = toy_scenario(&grid, 3, 6, seed).unwrap();
        let rep = run_dynamic(&grid, &sc, &ControllerConfig::default()).unwrap();
        for s in &rep.slots {
            for &id in &s.charging {
                prop_assert!(sc.tasks[id].in_window(s.slot));
            }
        }
        for t in &rep.tasks {
            prop_assert!(t.completed);
            prop_assert_eq!(t.slots_charged, sc.tasks[t.task_id].required_slots);
        }
        let gen: f64 = rep.slots.iter().map(|s| s.generation_cost).sum();
        prop_assert!((gen + rep.totals.charging_cost - rep.totals.total_cost).abs() < 1e-9 * rep.totals.total_cost);
    }
}
