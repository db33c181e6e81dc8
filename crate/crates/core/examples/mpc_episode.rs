//! A rolling-horizon day next to its static counterpart on the same fleet.

use pevgrid::harness::{cmd_compare, cmd_run, summary_table, RunConfig, RunMode};
use pevgrid::scenario::FleetParams;

fn main() -> pevgrid::Result<()> {
    env_logger::init();
    let case = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    let per_station = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let base = RunConfig {
        case: case.clone(),
        fleet: FleetParams {
            pevs_per_station: per_station,
            ..Default::default()
        },
        ..Default::default()
    };
    let dynamic = cmd_run(&base)?;
    let fixed = cmd_run(&RunConfig {
        mode: RunMode::Static,
        ..base
    })?;
    print!("{}", summary_table(&[(&case, &dynamic), (&case, &fixed)]));
    print!("{}", cmd_compare(&dynamic, &fixed)?.table());
    Ok(())
}
