//! Solve the bundled analytic conic programs and compare with their known optima.

use pevgrid::sdp::{fixtures::analytic_fixtures, solve, SolveOptions};

fn main() -> pevgrid::Result<()> {
    println!("{:<22} {:>14} {:>14} {:>6} {:>10}", "fixture", "objective", "optimum", "iters", "status");
    for f in analytic_fixtures() {
        let sol = solve(&f.program, &SolveOptions::tight())?;
        println!(
            "{:<22} {:>14.9} {:>14.9} {:>6} {:>10?}",
            f.name, sol.objective, f.optimum, sol.iterations, sol.status
        );
    }
    Ok(())
}
