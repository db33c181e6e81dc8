//! Single-slot semidefinite relaxation of an OPF and the voltages it implies.

use pevgrid::grid::builtin_case;
use pevgrid::relaxation::{recover_voltage, recovered_balance_residual, solve_sdr, HorizonProblem, SdrOptions};
use pevgrid::scenario::{LoadTable, Profile, TimeGrid};
use pevgrid::sdp::SolveOptions;
use pevgrid::stage2::rank_residual;

fn main() -> pevgrid::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    let grid = builtin_case(&name)?;
    let profile = Profile::builtin("profile2")?;
    let time = TimeGrid::default();
    let loads = LoadTable::build(&grid, &profile, &time)?;
    // Slot 4 sits on the evening peak.
    let hp = HorizonProblem::new(&grid, &loads, &profile, time.slot_hours, 4..=4, vec![])?;
    let sol = solve_sdr(&hp, &SdrOptions::default(), &SolveOptions::default())?;
    let w = sol.w_at(4);
    let trace: f64 = (0..w.nrows()).map(|k| w[(k, k)].re).sum();
    println!("{name}: generation cost {:.4} $/h", sol.total_cost());
    println!("Trace(W) - lambda_max = {:.3e} (trace {trace:.4})", rank_residual(w)?);
    let v = recover_voltage(w);
    let resid = recovered_balance_residual(&grid, &v, &sol.pg[0], &sol.qg[0], &hp.load_p[0], &hp.load_q[0], &vec![0.0; grid.num_buses()])?;
    println!("power balance residual of the recovered voltages {resid:.2e} p.u.");
    for (bus, z) in grid.buses.iter().zip(&v) {
        println!("  bus {:>3}  |V| {:.4}  angle {:>8.3} deg", bus.id, z.norm(), z.arg().to_degrees());
    }
    Ok(())
}
