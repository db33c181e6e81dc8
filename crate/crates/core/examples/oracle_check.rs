//! Brute-force optimum against the two-stage pipeline on seeded toy instances.

use pevgrid::harness::{cmd_oracle, RunConfig, ToySpec};
use pevgrid::scenario::FleetParams;

fn main() -> pevgrid::Result<()> {
    println!("{:>4} {:>6} {:>12} {:>12} {:>10} {:>10}", "seed", "slots", "oracle", "pipeline", "gap", "|dV|");
    for seed in 0..5 {
        let slots = 4 + (seed as usize % 3);
        let cfg = RunConfig {
            case: "case3".into(),
            toy: Some(ToySpec { tasks: 2, slots }),
            fleet: FleetParams {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let c = cmd_oracle(&cfg)?;
        println!(
            "{seed:>4} {slots:>6} {:>12.5} {:>12.5} {:>10.2e} {:>10.2e}",
            c.oracle.cost, c.pipeline_cost, c.relative_gap, c.voltage_distance
        );
    }
    Ok(())
}
