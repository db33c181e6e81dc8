use super::*;
use crate::grid::{builtin_case, GridCase};
use crate::relaxation::{recovered_balance_residual, HorizonTask};
use crate::scenario::{LoadTable, Profile, ScheduleMode, TimeGrid};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn horizon<'g>(grid: &'g GridCase, profile: &Profile, tasks: Vec<HorizonTask>) -> HorizonProblem<'g> {
    let slots = profile.len();
    let time = TimeGrid::new(slots, 0.5).unwrap();
    let loads = LoadTable::build(grid, profile, &time).unwrap();
    HorizonProblem::new(grid, &loads, profile, 0.5, 0..=slots - 1, tasks).unwrap()
}

#[test]
fn outer_product_has_zero_residual() {
    let v = nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(0.5, -0.2), c(-0.3, 0.9)]);
    let w = &v * v.adjoint();
    assert!(rank_residual(&w).unwrap() < 1e-12);
}

#[test]
fn identity_residual_is_one() {
    let w = DMatrix::<Complex64>::identity(2, 2);
    assert!((rank_residual(&w).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn indefinite_matrix_is_rejected() {
    let w = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0)]);
    assert!(matches!(rank_residual(&w), Err(Error::Domain(_))));
}

proptest! {
    #[test]
    fn residual_is_the_tail_of_the_spectrum(
        n in 2usize..6,
        k in 1usize..4,
        seed in prop::collection::vec(-1.0f64..1.0, 2 * 6 * 4),
    ) {
        let mut b = DMatrix::<Complex64>::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                let p = 2 * (i * 4 + j);
                b[(i, j)] = c(seed[p], seed[p + 1]);
            }
        }
        let w = &b * b.adjoint();
        let (values, _) = hermitian_eigen(&w);
        let tail: f64 = values.iter().take(n - 1).map(|v| v.max(0.0)).sum();
        prop_assert!((rank_residual(&w).unwrap() - tail).abs() < 1e-8 * (1.0 + tail));
    }
}

#[test]
fn rank_one_relaxation_short_circuits() {
    let grid = builtin_case("case3").unwrap();
    let profile = Profile::flat(3, 0.8, 0.2);
    let bus = grid.bus_index(grid.stations()[0]).unwrap();
    let task = HorizonTask {
        task_id: 0,
        bus,
        window: (0, 2),
        rate_kw: 20.0,
        energy_per_slot_kwh: 10.0,
        remaining_kwh: 20.0,
        required_slots: 2,
    };
    let hp = horizon(&grid, &profile, vec![task]);
    let mut tau = ChargingSchedule::zeros(vec![0], 0, 3, ScheduleMode::Binary);
    tau.set(0, 0, 1.0);
    tau.set(0, 2, 1.0);
    let res = stage2_solve(&hp, &tau, &Stage2Options::default()).unwrap();
    assert!(res.rank_one);
    assert_eq!(res.iterations(), 0);
    for slot in hp.slots() {
        assert!(res.relative_residual(slot) <= 1e-4);
        let v = res.voltage_at(slot);
        assert!(v[0].im.abs() < 1e-12 && v[0].re > 0.0);
        let draw = hp.pev_draw(&tau, slot);
        let off = slot - hp.first_slot;
        let resid = recovered_balance_residual(
            &grid,
            v,
            &res.solution.pg[off],
            &res.solution.qg[off],
            &hp.load_p[off],
            &hp.load_q[off],
            &draw,
        )
        .unwrap();
        assert!(resid < 1e-4, "slot {slot}: {resid}");
    }
    // Charging cost is carried along unchanged.
    let charge: f64 = res.solution.charging_cost.iter().sum();
    assert!((charge - (hp.charge_cost(0, 0) + hp.charge_cost(0, 2))).abs() < 1e-12);
}

#[test]
fn rotating_voltages_changes_nothing() {
    let grid = builtin_case("case3").unwrap();
    let profile = Profile::flat(1, 0.9, 0.2);
    let hp = horizon(&grid, &profile, vec![]);
    let tau = ChargingSchedule::zeros(vec![], 0, 1, ScheduleMode::Binary);
    let res = stage2_solve(&hp, &tau, &Stage2Options::default()).unwrap();
    let v = res.voltage_at(0).to_vec();
    let rot = Complex64::from_polar(1.0, 0.7);
    let turned: Vec<Complex64> = v.iter().map(|z| z * rot).collect();
    let args = |v: &[Complex64]| {
        recovered_balance_residual(&grid, v, &res.solution.pg[0], &res.solution.qg[0], &hp.load_p[0], &hp.load_q[0], &[0.0; 3])
            .unwrap()
    };
    assert!((args(&v) - args(&turned)).abs() < 1e-12);
    assert!(
        (crate::relaxation::box_violation(&grid, &v, &res.solution.pg[0], &res.solution.qg[0])
            - crate::relaxation::box_violation(&grid, &turned, &res.solution.pg[0], &res.solution.qg[0]))
        .abs()
            < 1e-12
    );
}

#[test]
fn penalized_slot_must_be_in_the_horizon() {
    let grid = builtin_case("case3").unwrap();
    let profile = Profile::flat(2, 0.9, 0.2);
    let hp = horizon(&grid, &profile, vec![]);
    let tau = ChargingSchedule::zeros(vec![], 0, 2, ScheduleMode::Binary);
    let opts = Stage2Options {
        penalized: Penalized::Slot(5),
        ..Default::default()
    };
    assert!(stage2_solve(&hp, &tau, &opts).is_err());
}
