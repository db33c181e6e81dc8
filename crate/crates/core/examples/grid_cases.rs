//! Bundled networks with their station counts, fleet sizes and `W(t)` dimension.

use pevgrid::grid::{builtin_case, builtin_case_names};
use pevgrid::scenario::{build_fleet, FleetParams, TimeGrid};

fn main() -> pevgrid::Result<()> {
    let time = TimeGrid::default();
    let params = FleetParams::default();
    println!(
        "{:<8} {:>6} {:>6} {:>9} {:>6} {:>8} {:>8}",
        "case", "buses", "lines", "stations", "PEVs", "dim W", "binary"
    );
    for name in builtin_case_names() {
        let grid = builtin_case(name)?;
        let fleet = build_fleet(&grid, &params, &time)?;
        println!(
            "{:<8} {:>6} {:>6} {:>9} {:>6} {:>8} {:>8}",
            name,
            grid.num_buses(),
            grid.lines.len(),
            grid.stations().len(),
            fleet.tasks.len(),
            format!("{0}x{0}", grid.num_buses()),
            fleet.tasks.iter().map(|t| t.window_len()).sum::<usize>()
        );
    }
    Ok(())
}
