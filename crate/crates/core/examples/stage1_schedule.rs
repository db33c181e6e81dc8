//! First stage on a small horizon: the penalized objective falls pass by pass
//! until the relaxed schedule is binary.

use pevgrid::grid::builtin_case;
use pevgrid::relaxation::{HorizonProblem, HorizonTask};
use pevgrid::scenario::{toy_scenario, LoadTable};
use pevgrid::stage1::{stage1_solve, Stage1Options};

fn main() -> pevgrid::Result<()> {
    let grid = builtin_case("case3")?;
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let sc = toy_scenario(&grid, 3, 6, seed)?;
    let loads = LoadTable::build(&grid, &sc.profile, &sc.time)?;
    let tasks = sc
        .tasks
        .iter()
        .map(|t| HorizonTask::new(t, &grid, 0, t.energy_demand_kwh(), sc.time.slot_hours))
        .collect::<pevgrid::Result<Vec<_>>>()?;
    let hp = HorizonProblem::new(&grid, &loads, &sc.profile, sc.time.slot_hours, 0..=5, tasks)?;
    println!("prices {:?}", sc.profile.price);
    for t in &sc.tasks {
        println!("task {}: window [{}, {}], needs {} slots", t.id, t.arrival, t.departure, t.required_slots);
    }
    let res = stage1_solve(&hp, &Stage1Options::default())?;
    print!("{}", res.trace_csv());
    println!("relaxation {:.6}, binary {}", res.sdr_value, res.binary);
    for row in 0..res.schedule.num_tasks() {
        println!("task {row}: {:?}", res.schedule.row(row));
    }
    Ok(())
}
