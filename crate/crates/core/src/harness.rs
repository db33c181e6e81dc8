//! Experiment plumbing behind the command-line tool: run configuration,
//! artifact writing, summary tables, report comparison and the bundled
//! self-checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{builtin_case, builtin_case_names, resolve_case, Complex64, GridCase};
use crate::mpc::{ControllerConfig, EpisodeReport, Episode, Mode};
use crate::oracle::{OracleInstance, OracleOptions, OracleSolution};
use crate::scenario::{build_fleet, toy_scenario, FleetParams, Profile, Scenario, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Dynamic,
    Static,
    Oracle,
    Validate,
}

/// A small seeded instance in place of the Gaussian fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpec {
    pub tasks: usize,
    pub slots: usize,
}

/// Everything needed to reproduce a run. Serialized next to its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin case name or path to a JSON case.
    pub case: String,
    /// Builtin profile name or path to a CSV profile.
    pub profile: String,
    pub mode: RunMode,
    pub num_slots: usize,
    pub slot_hours: f64,
    pub fleet: FleetParams,
    pub toy: Option<ToySpec>,
    /// JSON array of charging tasks used instead of the generated fleet.
    pub fleet_file: Option<PathBuf>,
    pub controller: ControllerConfig,
    pub oracle: OracleOptions,
    /// Directory of cached oracle results.
    pub oracle_cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: "case9".into(),
            profile: "profile2".into(),
            mode: RunMode::Dynamic,
            num_slots: 24,
            slot_hours: 0.5,
            fleet: FleetParams::default(),
            toy: None,
            fleet_file: None,
            controller: ControllerConfig::default(),
            oracle: OracleOptions::default(),
            oracle_cache: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.fleet.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        if self.num_slots == 0 || !(self.slot_hours > 0.0) {
            return Err(Error::Config("need at least one slot of positive length".into()));
        }
        if let Some(toy) = self.toy {
            if toy.slots == 0 {
                return Err(Error::Config("toy instances need at least one slot".into()));
            }
        }
        if self.mode == RunMode::Oracle && self.toy.is_none() {
            return Err(Error::Config("oracle mode needs a toy instance (`toy` / --tasks --slots)".into()));
        }
        Ok(())
    }

    /// Controller settings with the run mode applied.
    pub fn controller(&self) -> ControllerConfig {
        let mut c = self.controller.clone();
        if self.mode == RunMode::Static {
            c.mode = Mode::Static;
        } else {
            c.mode = Mode::Dynamic;
        }
        c
    }

    pub fn grid(&self) -> Result<GridCase> {
        resolve_case(&self.case)
    }

    /// The scenario this configuration describes. Fleet tasks whose window
    /// cannot hold their demand are dropped with a warning.
    pub fn scenario(&self, grid: &GridCase) -> Result<Scenario> {
        if let Some(toy) = self.toy {
            return toy_scenario(grid, toy.tasks, toy.slots, self.seed());
        }
        let profile = Profile::resolve(&self.profile)?;
        let time = TimeGrid::new(self.num_slots, self.slot_hours)?;
        if let Some(path) = &self.fleet_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let tasks = Scenario::fleet_from_json(&text)?;
            for t in &tasks {
                grid.bus_index(t.station)?;
            }
            return Scenario::new(time, profile, tasks, self.seed());
        }
        let fleet = build_fleet(grid, &self.fleet, &time)?;
        for r in &fleet.rejected {
            log::warn!("dropping PEV {} at bus {}: {}", r.pev_index, r.station, r.reason);
        }
        Scenario::new(time, profile, fleet.tasks, self.seed())
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver(_) => 3,
        Error::Infeasible(_) => 4,
        _ => 2,
    }
}

/// One row per report: binary variables, μ₁, μ₂, stage-1 and stage-2 objectives, mean step time.
pub fn summary_table(rows: &[(&str, &EpisodeReport)]) -> String {
    let mut out = format!(
        "{:<10} {:<8} {:>8} {:>6} {:>6} {:>16} {:>16} {:>12}\n",
        "case", "mode", "binary", "mu1", "mu2", "stage-1", "stage-2", "step [s]"
    );
    for (case, r) in rows {
        let mode = match r.config.mode {
            Mode::Dynamic => "dynamic",
            Mode::Static => "static",
        };
        let _ = writeln!(
            out,
            "{:<10} {:<8} {:>8} {:>6} {:>6} {:>16.4} {:>16.4} {:>12.3}",
            case,
            mode,
            r.binary_variable_count,
            r.config.mu1,
            r.config.mu2,
            r.totals.stage1_objective,
            r.totals.stage2_objective,
            r.mean_step_seconds
        );
    }
    out
}

/// Sum of the absolute duality gaps the solver reported for the applied slots.
pub fn reported_solver_gap(r: &EpisodeReport) -> f64 {
    r.slots
        .iter()
        .map(|s| {
            s.stage1.as_ref().map_or(0.0, |x| x.solver_gap.abs()) + s.stage2.as_ref().map_or(0.0, |x| x.solver_gap.abs())
        })
        .sum()
}

/// Applied voltages as phasors.
pub fn report_voltages(r: &EpisodeReport) -> Vec<Vec<Complex64>> {
    r.slots
        .iter()
        .map(|s| {
            s.vm.iter()
                .zip(&s.va_deg)
                .map(|(&m, &a)| Complex64::from_polar(m, a.to_radians()))
                .collect()
        })
        .collect()
}

/// Largest bus-voltage difference after rotating `b` onto `a` at the first bus.
pub fn voltage_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let rot = if b[0].norm() > 0.0 && a[0].norm() > 0.0 {
        Complex64::from_polar(1.0, a[0].arg() - b[0].arg())
    } else {
        Complex64::new(1.0, 0.0)
    };
    a.iter().zip(b).map(|(x, y)| (x - y * rot).norm()).fold(0.0, f64::max)
}

pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Artifacts { dir, files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

/// Dynamic or static episode per `cfg.mode`, with artifacts under `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<EpisodeReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scenario = cfg.scenario(&grid)?;
    // The config echo goes first so a failed run still leaves it behind.
    let mut art = match &cfg.out {
        Some(dir) => {
            let mut a = Artifacts::new(dir)?;
            a.write("config.json", &cfg.to_json())?;
            Some(a)
        }
        None => None,
    };
    let report = Episode::new(&grid, &scenario, cfg.controller())?.run()?;
    if let Some(a) = art.as_mut() {
        a.write("report.json", &report.to_json())?;
        a.write("schedule.csv", &report.schedule_csv())?;
        a.write("generation.csv", &report.generation_csv(&grid))?;
        a.write("summary.txt", &summary_table(&[(&grid.name, &report)]))?;
    }
    Ok(report)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EpisodeReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub dynamic_total: f64,
    pub static_total: f64,
    /// `dynamic − static`.
    pub gap: f64,
    pub relative_gap: f64,
    /// Solver noise the gap should be read against.
    pub tolerance: f64,
    pub slot_costs: Vec<(f64, f64)>,
    pub dynamic_completed: usize,
    pub static_completed: usize,
    pub tasks: usize,
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dynamic total  {:.6}", self.dynamic_total);
        let _ = writeln!(out, "static total   {:.6}", self.static_total);
        let _ = writeln!(
            out,
            "gap            {:.6e} ({:.3e} relative, solver tolerance {:.1e})",
            self.gap, self.relative_gap, self.tolerance
        );
        let _ = writeln!(
            out,
            "completed      dynamic {}/{}  static {}/{}",
            self.dynamic_completed, self.tasks, self.static_completed, self.tasks
        );
        let _ = writeln!(out, "{:>4} {:>14} {:>14} {:>12}", "slot", "dynamic", "static", "diff");
        for (t, (d, s)) in self.slot_costs.iter().enumerate() {
            let _ = writeln!(out, "{t:>4} {d:>14.4} {s:>14.4} {:>12.4}", d - s);
        }
        out
    }
}

/// Gap between a dynamic and a static report of the same scenario.
pub fn cmd_compare(dynamic: &EpisodeReport, fixed: &EpisodeReport) -> Result<Comparison> {
    if dynamic.seed != fixed.seed {
        return Err(Error::Config(format!(
            "reports come from different seeds ({} vs {})",
            dynamic.seed, fixed.seed
        )));
    }
    if dynamic.case != fixed.case || dynamic.profile != fixed.profile || dynamic.num_slots != fixed.num_slots {
        return Err(Error::Config("reports describe different scenarios".into()));
    }
    let d = dynamic.totals.total_cost;
    let s = fixed.totals.total_cost;
    Ok(Comparison {
        dynamic_total: d,
        static_total: s,
        gap: d - s,
        relative_gap: (d - s) / s.abs().max(f64::MIN_POSITIVE),
        tolerance: reported_solver_gap(dynamic) + reported_solver_gap(fixed),
        slot_costs: dynamic.slots.iter().zip(&fixed.slots).map(|(a, b)| (a.cost(), b.cost())).collect(),
        dynamic_completed: dynamic.tasks.iter().filter(|t| t.completed).count(),
        static_completed: fixed.tasks.iter().filter(|t| t.completed).count(),
        tasks: dynamic.tasks.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub oracle: OracleSolution,
    pub pipeline_cost: f64,
    /// `(pipeline − oracle) / oracle`.
    pub relative_gap: f64,
    pub voltage_distance: f64,
    pub oracle_seconds: f64,
    pub pipeline_seconds: f64,
}

/// Brute-force optimum against the static two-stage pipeline on a toy instance.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<OracleComparison> {
    let mut cfg = cfg.clone();
    cfg.mode = RunMode::Oracle;
    if cfg.toy.is_none() {
        cfg.toy = Some(ToySpec { tasks: 2, slots: 4 });
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scenario = cfg.scenario(&grid)?;
    let mut inst = OracleInstance::new(&grid, &scenario);
    inst.options = cfg.oracle.clone();
    let start = std::time::Instant::now();
    let oracle = match &cfg.oracle_cache {
        Some(dir) => inst.solve_cached(dir)?,
        None => inst.solve()?,
    };
    let oracle_seconds = start.elapsed().as_secs_f64();
    let mut controller = cfg.controller();
    controller.mode = Mode::Static;
    let report = Episode::new(&grid, &scenario, controller)?.run()?;
    let voltages = report_voltages(&report);
    let dist = oracle
        .voltages()
        .iter()
        .zip(&voltages)
        .map(|(o, p)| voltage_distance(o, p))
        .fold(0.0, f64::max);
    let cmp = OracleComparison {
        pipeline_cost: report.totals.total_cost,
        relative_gap: (report.totals.total_cost - oracle.cost) / oracle.cost.abs().max(f64::MIN_POSITIVE),
        voltage_distance: dist,
        oracle,
        oracle_seconds,
        pipeline_seconds: report.total_seconds,
    };
    if let Some(dir) = &cfg.out {
        let mut a = Artifacts::new(dir)?;
        a.write("config.json", &cfg.to_json())?;
        a.write("oracle.json", &serde_json::to_string_pretty(&cmp).expect("serializes"))?;
        a.write("report.json", &report.to_json())?;
    }
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Self-checks over the bundled data: cases and profiles parse, fleet sizes
/// and `W` dimensions, the analytic solver fixtures, and one oracle instance.
pub fn cmd_validate() -> Vec<Check> {
    let mut out = Vec::new();
    let time = TimeGrid::default();
    for name in builtin_case_names() {
        match builtin_case(name) {
            Ok(grid) => {
                let fleet = build_fleet(&grid, &FleetParams::default(), &time);
                let detail = match &fleet {
                    Ok(f) => format!(
                        "{} buses, W {}x{}, {} stations, {} PEVs, {} rejected",
                        grid.num_buses(),
                        grid.num_buses(),
                        grid.num_buses(),
                        grid.stations().len(),
                        f.tasks.len(),
                        f.rejected.len()
                    ),
                    Err(e) => e.to_string(),
                };
                let ok = fleet.map(|f| f.tasks.len() == 42 * grid.stations().len()).unwrap_or(false);
                out.push(check(format!("case {name}"), ok, detail));
            }
            Err(e) => out.push(check(format!("case {name}"), false, e.to_string())),
        }
    }
    for name in ["profile1", "profile2", "profile3", "profile4"] {
        let r = Profile::builtin(name);
        out.push(check(
            format!("profile {name}"),
            r.as_ref().map(|p| p.len() == 24).unwrap_or(false),
            r.map(|p| format!("{} slots", p.len())).unwrap_or_else(|e| e.to_string()),
        ));
    }
    for f in crate::sdp::fixtures::analytic_fixtures() {
        let r = crate::sdp::solve(&f.program, &crate::sdp::SolveOptions::tight());
        let (ok, detail) = match r {
            Ok(sol) => {
                let rel = (sol.objective - f.optimum).abs() / f.optimum.abs().max(1.0);
                (rel <= 1e-6, format!("objective {:.9} vs {:.9}", sol.objective, f.optimum))
            }
            Err(e) => (false, e.to_string()),
        };
        out.push(check(format!("solver {}", f.name), ok, detail));
    }
    let cfg = RunConfig {
        case: "case3".into(),
        toy: Some(ToySpec { tasks: 2, slots: 4 }),
        fleet: FleetParams {
            seed: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    match cmd_oracle(&cfg) {
        Ok(c) => out.push(check(
            "oracle case3",
            c.relative_gap.abs() <= 1e-2 && c.voltage_distance <= 1e-2,
            format!("gap {:.2e}, voltage distance {:.2e}", c.relative_gap, c.voltage_distance),
        )),
        Err(e) => out.push(check("oracle case3", false, e.to_string())),
    }
    out
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Builtin case name or JSON case path.
    #[arg(long)]
    pub case: Option<String>,
    /// Builtin profile name or CSV profile path.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long = "exponent-L")]
    pub exponent_l: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// PEVs generated per charging station.
    #[arg(long)]
    pub per_station: Option<usize>,
    /// Use a toy instance with this many tasks (needs --slots).
    #[arg(long, requires = "slots")]
    pub tasks: Option<usize>,
    #[arg(long, requires = "tasks")]
    pub slots: Option<usize>,
    /// JSON array of charging tasks replacing the generated fleet.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    #[arg(long)]
    pub horizon_cap: Option<usize>,
    #[arg(long)]
    pub no_angle_limits: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Dynamic,
    Static,
    Oracle,
    Validate,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dynamic => RunMode::Dynamic,
            ModeArg::Static => RunMode::Static,
            ModeArg::Oracle => RunMode::Oracle,
            ModeArg::Validate => RunMode::Validate,
        }
    }
}

impl RunArgs {
    /// The configuration file (or defaults) with these flags applied.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => base,
        };
        if let Some(v) = &self.case {
            cfg.case = v.clone();
        }
        if let Some(v) = &self.profile {
            cfg.profile = v.clone();
        }
        if let Some(v) = self.mode {
            cfg.mode = v.into();
        }
        if let Some(v) = self.seed {
            cfg.fleet.seed = v;
        }
        if let Some(v) = self.mu1 {
            cfg.controller.mu1 = v;
        }
        if let Some(v) = self.mu2 {
            cfg.controller.mu2 = v;
        }
        if let Some(v) = self.exponent_l {
            cfg.controller.exponent = v;
        }
        if let Some(v) = self.epsilon {
            cfg.controller.epsilon = v;
        }
        if let Some(v) = self.per_station {
            cfg.fleet.pevs_per_station = v;
        }
        if let (Some(tasks), Some(slots)) = (self.tasks, self.slots) {
            cfg.toy = Some(ToySpec { tasks, slots });
        }
        if let Some(v) = &self.fleet {
            cfg.fleet_file = Some(v.clone());
        }
        if let Some(v) = self.horizon_cap {
            cfg.controller.horizon_cap = Some(v);
        }
        if self.no_angle_limits {
            cfg.controller.angle_limits = false;
            cfg.oracle.angle_limits = false;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests;
