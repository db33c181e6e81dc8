use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pevgrid::harness::{
    cmd_compare, cmd_oracle, cmd_run, cmd_validate, exit_code, load_report, summary_table, RunArgs, RunConfig, RunMode,
    ToySpec,
};
use pevgrid::Error;

#[derive(Parser)]
#[command(name = "pevgrid", version, about = "Joint PEV charging and AC OPF scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dynamic or static episode and write its report.
    Run(RunArgs),
    /// Compare a dynamic report against a static one.
    Compare {
        dynamic: PathBuf,
        #[arg(name = "static")]
        fixed: PathBuf,
    },
    /// Brute-force optimum against the pipeline on a toy instance.
    Oracle(RunArgs),
    /// Check the bundled cases, profiles and solver fixtures.
    Validate,
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err) as u8)
}

fn validate() -> ExitCode {
    let checks = cmd_validate();
    for c in &checks {
        println!("{} {:<28} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn oracle(cfg: &RunConfig) -> ExitCode {
    match cmd_oracle(cfg) {
        Ok(c) => {
            println!("oracle cost    {:.6} ({:.2}s)", c.oracle.cost, c.oracle_seconds);
            println!("pipeline cost  {:.6} ({:.2}s)", c.pipeline_cost, c.pipeline_seconds);
            println!("relative gap   {:.3e}", c.relative_gap);
            println!("voltage dist.  {:.3e} p.u.", c.voltage_distance);
            println!("schedules      {} enumerated, {} feasible", c.oracle.enumerated, c.oracle.feasible);
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = match args.resolve(RunConfig::default()) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match cfg.mode {
                RunMode::Validate => validate(),
                RunMode::Oracle => oracle(&cfg),
                RunMode::Dynamic | RunMode::Static => match cmd_run(&cfg) {
                    Ok(report) => {
                        let case = report.case.clone();
                        print!("{}", summary_table(&[(&case, &report)]));
                        println!(
                            "total cost {:.6}, {} fallbacks, {}/{} tasks completed",
                            report.totals.total_cost,
                            report.fallbacks,
                            report.tasks.iter().filter(|t| t.completed).count(),
                            report.tasks.len()
                        );
                        if let Some(dir) = &cfg.out {
                            println!("artifacts in {}", dir.display());
                        }
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e),
                },
            }
        }
        Command::Compare { dynamic, fixed } => {
            let reports = load_report(&dynamic).and_then(|d| Ok((d, load_report(&fixed)?)));
            match reports.and_then(|(d, s)| cmd_compare(&d, &s)) {
                Ok(c) => {
                    print!("{}", c.table());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Oracle(args) => {
            let base = RunConfig {
                case: "case3".into(),
                mode: RunMode::Oracle,
                toy: Some(ToySpec { tasks: 2, slots: 4 }),
                ..RunConfig::default()
            };
            match args.resolve(base) {
                Ok(mut cfg) => {
                    cfg.mode = RunMode::Oracle;
                    oracle(&cfg)
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate => validate(),
    }
}
