//! Second stage with the charging schedule fixed: rank residuals per slot and
//! the recovered voltage profile.

use pevgrid::grid::builtin_case;
use pevgrid::relaxation::{HorizonProblem, HorizonTask};
use pevgrid::scenario::{build_fleet, FleetParams, LoadTable, Profile, TimeGrid};
use pevgrid::stage1::{stage1_solve, Stage1Options};
use pevgrid::stage2::{stage2_solve, Stage2Options};

fn main() -> pevgrid::Result<()> {
    let grid = builtin_case("case9")?;
    let time = TimeGrid::default();
    let profile = Profile::builtin("profile2")?;
    let loads = LoadTable::build(&grid, &profile, &time)?;
    let params = FleetParams {
        pevs_per_station: 2,
        ..Default::default()
    };
    let fleet = build_fleet(&grid, &params, &time)?;
    let tasks = fleet
        .tasks
        .iter()
        .map(|t| HorizonTask::new(t, &grid, 0, t.energy_demand_kwh(), time.slot_hours))
        .collect::<pevgrid::Result<Vec<_>>>()?;
    let hp = HorizonProblem::new(&grid, &loads, &profile, time.slot_hours, 0..=time.num_slots - 1, tasks)?;
    let s1 = stage1_solve(&hp, &Stage1Options::default())?;
    let s2 = stage2_solve(&hp, &s1.schedule, &Stage2Options::default())?;
    println!(
        "stage 1 relaxed {:.4}, stage 2 total {:.4}, {} penalty passes, rank one: {}",
        s1.relaxed_value(),
        s2.total_cost(),
        s2.iterations(),
        s2.rank_one
    );
    for t in hp.slots() {
        let v = s2.voltage_at(t);
        let vmin = v.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        println!("slot {t:>2}: relative residual {:.1e}, min |V| {vmin:.4}", s2.relative_residual(t));
    }
    Ok(())
}
