//! Rolling-horizon control and its full-information counterpart.
//!
//! At slot `t` the controller sees the tasks that have arrived and still need
//! energy, plans over `[t, Ψ(t)]` with both stages, and applies slot `t`
//! only. The static run plans once over the whole day with every task known.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Complex64, GridCase};
use crate::relaxation::{recovered_balance_residual, HorizonProblem, HorizonSolution, HorizonTask};
use crate::scenario::{ChargingSchedule, LoadTable, Scenario, ScheduleMode};
use crate::sdp::SolveOptions;
use crate::stage1::{stage1_solve, Stage1Options, Stage1Result};
use crate::stage2::{rank_residual, stage2_solve, Penalized, Stage2Options, Stage2Result};

/// Tolerance below which remaining energy counts as delivered, kWh.
const ENERGY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dynamic,
    Static,
}

/// Knobs of one controller run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub mode: Mode,
    pub mu1: f64,
    pub mu2: f64,
    pub exponent: f64,
    pub epsilon: f64,
    pub stage1_max_iter: usize,
    pub stage2_max_iter: usize,
    pub angle_limits: bool,
    /// Longest horizon in slots; `None` plans to the last departure.
    pub horizon_cap: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mode: Mode::Dynamic,
            mu1: 1.0,
            mu2: 10.0,
            exponent: 1.5,
            epsilon: 1e-4,
            stage1_max_iter: 50,
            stage2_max_iter: 50,
            angle_limits: true,
            horizon_cap: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0) {
            return Err(Error::Config("penalty weights must be non-negative".into()));
        }
        if !(self.exponent > 1.0 && self.exponent.is_finite()) {
            return Err(Error::Config(format!("exponent L must be > 1, got {}", self.exponent)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.horizon_cap == Some(0) {
            return Err(Error::Config("horizon cap must be at least one slot".into()));
        }
        Ok(())
    }

    pub fn stage1(&self) -> Stage1Options {
        Stage1Options {
            mu1: self.mu1,
            exponent: self.exponent,
            epsilon: self.epsilon,
            max_iter: self.stage1_max_iter,
            angle_limits: self.angle_limits,
            solver: SolveOptions::default(),
            ..Default::default()
        }
    }

    pub fn stage2(&self, penalized: Penalized) -> Stage2Options {
        Stage2Options {
            mu2: self.mu2,
            epsilon: self.epsilon,
            max_iter: self.stage2_max_iter,
            penalized,
            angle_limits: self.angle_limits,
            solver: SolveOptions::default(),
        }
    }
}

/// What the controller knows at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcState {
    pub slot: usize,
    /// Energy still owed to each task, kWh; negative after a final overshoot.
    pub remaining_kwh: Vec<f64>,
    pub cumulative_cost: f64,
}

impl MpcState {
    pub fn new(scenario: &Scenario) -> Self {
        MpcState {
            slot: 0,
            remaining_kwh: scenario.tasks.iter().map(|t| t.energy_demand_kwh()).collect(),
            cumulative_cost: 0.0,
        }
    }

    /// Tasks plugged in at the current slot with energy still owed, `C(t)`.
    pub fn connected(&self, scenario: &Scenario) -> Vec<usize> {
        scenario
            .tasks
            .iter()
            .filter(|t| t.in_window(self.slot) && self.remaining_kwh[t.id] > ENERGY_EPS)
            .map(|t| t.id)
            .collect()
    }

    /// `Ψ(t)`, the latest departure over `C(t)`; the current slot when nobody is connected.
    pub fn horizon_end(&self, scenario: &Scenario) -> usize {
        self.connected(scenario)
            .iter()
            .map(|&id| scenario.tasks[id].departure)
            .max()
            .unwrap_or(self.slot)
    }
}

/// Stage-1 figures of one horizon solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub iterations: usize,
    pub binary: bool,
    pub sdr_value: f64,
    /// `F` of the final relaxed iterate.
    pub relaxed_value: f64,
    /// Penalized objective of the final iterate.
    pub objective: f64,
    /// `max |τ − round(τ)|` before rounding.
    pub max_binary_violation: f64,
    pub monotone: bool,
    /// Reported duality gap of the last accepted pass.
    pub solver_gap: f64,
}

impl From<&Stage1Result> for Stage1Summary {
    fn from(r: &Stage1Result) -> Self {
        let last = r.trace.last().expect("stage 1 always records the relaxation");
        Stage1Summary {
            iterations: r.iterations(),
            binary: r.binary,
            sdr_value: r.sdr_value,
            relaxed_value: r.relaxed_value(),
            objective: last.objective,
            max_binary_violation: last.max_binary_violation,
            monotone: r.is_monotone(1e-8),
            solver_gap: r.relaxed.solver.gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub iterations: usize,
    pub rank_one: bool,
    /// Generation plus charging cost over the horizon.
    pub total_cost: f64,
    pub monotone: bool,
    pub rejected_passes: usize,
    pub solver_gap: f64,
}

impl From<&Stage2Result> for Stage2Summary {
    fn from(r: &Stage2Result) -> Self {
        Stage2Summary {
            iterations: r.iterations(),
            rank_one: r.rank_one,
            total_cost: r.total_cost(),
            monotone: r.is_monotone(1e-8),
            rejected_passes: r.rejected_passes,
            solver_gap: r.solution.solver.gap,
        }
    }
}

/// Everything applied in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub connected: Vec<usize>,
    pub horizon_end: usize,
    /// Tasks charging in this slot.
    pub charging: Vec<usize>,
    /// Voltage magnitude and angle (degrees) per bus.
    pub vm: Vec<f64>,
    pub va_deg: Vec<f64>,
    /// Generator outputs, per-unit.
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub generation_cost: f64,
    pub charging_cost: f64,
    /// `Trace − λmax` of the applied `W` and the same relative to its trace.
    pub rank_residual: f64,
    pub relative_rank_residual: f64,
    pub balance_residual: f64,
    /// Stage-1 relaxed cost of this slot in the plan it came from.
    pub stage1_slot_cost: f64,
    pub stage1: Option<Stage1Summary>,
    pub stage2: Option<Stage2Summary>,
    /// Set when the urgency fallback produced this slot.
    pub fallback: Option<String>,
    pub step_seconds: f64,
}

impl SlotRecord {
    pub fn cost(&self) -> f64 {
        self.generation_cost + self.charging_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub station: u32,
    pub arrival: usize,
    pub departure: usize,
    pub demand_kwh: f64,
    pub delivered_kwh: f64,
    pub energy_per_slot_kwh: f64,
    pub slots_charged: usize,
    /// Delivered at least the demand by departure.
    pub completed: bool,
    pub overshoot_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub generation_cost: f64,
    pub charging_cost: f64,
    pub total_cost: f64,
    /// Relaxed stage-1 cost of each applied slot, summed.
    pub stage1_objective: f64,
    /// Stage-2 cost of each applied slot, summed; equals `total_cost`.
    pub stage2_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub case: String,
    pub profile: String,
    pub seed: u64,
    pub config: ControllerConfig,
    pub num_slots: usize,
    pub slot_hours: f64,
    pub binary_variable_count: usize,
    pub slots: Vec<SlotRecord>,
    pub tasks: Vec<TaskRecord>,
    pub totals: Totals,
    pub fallbacks: usize,
    pub mean_step_seconds: f64,
    pub total_seconds: f64,
}

impl EpisodeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.mean_step_seconds = 0.0;
        r.total_seconds = 0.0;
        for s in &mut r.slots {
            s.step_seconds = 0.0;
        }
        r
    }

    pub fn all_completed(&self) -> bool {
        self.tasks.iter().all(|t| t.completed)
    }

    /// `task × slot` 0/1 matrix.
    pub fn schedule_csv(&self) -> String {
        let mut out = String::from("task");
        for s in 0..self.num_slots {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for t in &self.tasks {
            out.push_str(&t.task_id.to_string());
            for s in &self.slots {
                out.push_str(if s.charging.contains(&t.task_id) { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }

    /// One row per bus and slot: generation (MW, MVAr) and voltage magnitude.
    pub fn generation_csv(&self, grid: &GridCase) -> String {
        let mut out = String::from("bus,slot,p_mw,q_mvar,vm_pu,va_deg\n");
        for s in &self.slots {
            for (k, bus) in grid.buses.iter().enumerate() {
                let (mut p, mut q) = (0.0, 0.0);
                for (gi, _) in grid.generators_at(k) {
                    p += s.pg[gi] * grid.base_mva;
                    q += s.qg[gi] * grid.base_mva;
                }
                out.push_str(&format!("{},{},{p},{q},{},{}\n", bus.id.0, s.slot, s.vm[k], s.va_deg[k]));
            }
        }
        out
    }
}

/// Scenario data shared by every step of a run.
pub struct Episode<'a> {
    pub grid: &'a GridCase,
    pub scenario: &'a Scenario,
    pub loads: LoadTable,
    pub config: ControllerConfig,
}

impl<'a> Episode<'a> {
    pub fn new(grid: &'a GridCase, scenario: &'a Scenario, config: ControllerConfig) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        for t in &scenario.tasks {
            if !grid.is_station(t.station) {
                return Err(Error::Validation(format!("task {} sits at bus {} which is not a station", t.id, t.station)));
            }
        }
        let loads = LoadTable::build(grid, &scenario.profile, &scenario.time)?;
        Ok(Episode {
            grid,
            scenario,
            loads,
            config,
        })
    }

    fn slot_hours(&self) -> f64 {
        self.scenario.time.slot_hours
    }

    fn horizon(&self, first: usize, last: usize, ids: &[usize], remaining: &[f64]) -> Result<HorizonProblem<'a>> {
        let mut tasks = Vec::with_capacity(ids.len());
        for &id in ids {
            let task = &self.scenario.tasks[id];
            let mut ht = HorizonTask::new(task, self.grid, first, remaining[id], self.slot_hours())?;
            if ht.window.1 > last {
                // Slots past the cap stay available later; only what cannot
                // wait must fit inside this horizon.
                let beyond = ht.window.1 - last;
                ht.window.1 = last;
                ht.required_slots = ht.required_slots.saturating_sub(beyond);
            }
            tasks.push(ht);
        }
        HorizonProblem::new(self.grid, &self.loads, &self.scenario.profile, self.slot_hours(), first..=last, tasks)
    }

    fn record_slot(
        &self,
        hp: &HorizonProblem<'_>,
        slot: usize,
        tau: &ChargingSchedule,
        sol: &HorizonSolution,
        voltage: &[Complex64],
    ) -> Result<SlotRecord> {
        let off = slot - hp.first_slot;
        let charging: Vec<usize> = hp
            .tasks
            .iter()
            .enumerate()
            .filter(|(row, _)| tau.get(*row, slot) > 0.5)
            .map(|(_, t)| t.task_id)
            .collect();
        let w = sol.w_at(slot);
        let tr: f64 = (0..w.nrows()).map(|k| w[(k, k)].re).sum();
        let rr = rank_residual(w)?;
        let balance = recovered_balance_residual(
            self.grid,
            voltage,
            &sol.pg[off],
            &sol.qg[off],
            &hp.load_p[off],
            &hp.load_q[off],
            &hp.pev_draw(tau, slot),
        )?;
        Ok(SlotRecord {
            slot,
            connected: hp.tasks.iter().map(|t| t.task_id).collect(),
            horizon_end: hp.last_slot(),
            charging,
            vm: voltage.iter().map(|z| z.norm()).collect(),
            va_deg: voltage.iter().map(|z| z.arg().to_degrees()).collect(),
            pg: sol.pg[off].clone(),
            qg: sol.qg[off].clone(),
            generation_cost: sol.generation_cost[off],
            charging_cost: sol.charging_cost[off],
            rank_residual: rr,
            relative_rank_residual: rr / tr.max(f64::MIN_POSITIVE),
            balance_residual: balance,
            stage1_slot_cost: sol.slot_cost(slot),
            stage1: None,
            stage2: None,
            fallback: None,
            step_seconds: 0.0,
        })
    }

    fn two_stage(&self, hp: &HorizonProblem<'_>, penalized: Penalized) -> Result<(Stage1Result, Stage2Result)> {
        let s1 = stage1_solve(hp, &self.config.stage1())?;
        let s2 = stage2_solve(hp, &s1.schedule, &self.config.stage2(penalized))?;
        Ok((s1, s2))
    }

    /// Charge only the tasks that cannot wait, and solve slot `t` on its own;
    /// drop the angle limits if that is still infeasible.
    fn urgency_fallback(&self, state: &MpcState, ids: &[usize], cause: &Error) -> Result<(SlotRecord, ChargingSchedule)> {
        let t = state.slot;
        let mut tau = ChargingSchedule::zeros(ids.to_vec(), t, 1, ScheduleMode::Binary);
        let mut tasks = Vec::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            let task = &self.scenario.tasks[id];
            let mut ht = HorizonTask::new(task, self.grid, t, state.remaining_kwh[id], self.slot_hours())?;
            if ht.required_slots >= ht.window_len() {
                tau.set(row, t, 1.0);
            }
            ht.window = (t, t);
            ht.required_slots = tau.get(row, t) as usize;
            tasks.push(ht);
        }
        let hp = HorizonProblem::new(self.grid, &self.loads, &self.scenario.profile, self.slot_hours(), t..=t, tasks)?;
        let mut opts = self.config.stage2(Penalized::Slot(t));
        let (s2, note) = match stage2_solve(&hp, &tau, &opts) {
            Ok(s2) => (s2, format!("urgency schedule after: {cause}")),
            Err(Error::Infeasible(_)) | Err(Error::Solver(_)) if opts.angle_limits => {
                opts.angle_limits = false;
                let s2 = stage2_solve(&hp, &tau, &opts)?;
                (s2, format!("urgency schedule without angle limits after: {cause}"))
            }
            Err(e) => return Err(e),
        };
        log::warn!("slot {t}: {note}");
        let mut rec = self.record_slot(&hp, t, &tau, &s2.solution, s2.voltage_at(t))?;
        rec.connected = ids.to_vec();
        rec.stage2 = Some((&s2).into());
        rec.fallback = Some(note);
        Ok((rec, tau))
    }

    /// Plan at `state.slot`, apply that slot, and advance.
    pub fn step(&self, state: &MpcState) -> Result<(SlotRecord, MpcState)> {
        let start = Instant::now();
        let t = state.slot;
        let ids = state.connected(self.scenario);
        let mut last = state.horizon_end(self.scenario);
        if let Some(cap) = self.config.horizon_cap {
            last = last.min(t + cap - 1);
        }
        let planned = self
            .horizon(t, last, &ids, &state.remaining_kwh)
            .and_then(|hp| self.two_stage(&hp, Penalized::Slot(t)).map(|r| (hp, r)));
        let (mut rec, tau) = match planned {
            Ok((hp, (s1, s2))) => {
                let mut rec = self.record_slot(&hp, t, &s1.schedule, &s2.solution, s2.voltage_at(t))?;
                rec.stage1_slot_cost = s1.relaxed.slot_cost(t);
                rec.stage1 = Some((&s1).into());
                rec.stage2 = Some((&s2).into());
                (rec, s1.schedule)
            }
            Err(e @ (Error::Infeasible(_) | Error::Solver(_))) => {
                let (rec, tau) = self.urgency_fallback(state, &ids, &e)?;
                (rec, tau)
            }
            Err(e) => return Err(e),
        };
        let mut next = state.clone();
        for (row, &id) in tau.task_ids.iter().enumerate() {
            if tau.get(row, t) > 0.5 {
                next.remaining_kwh[id] -= self.scenario.tasks[id].energy_per_slot_kwh(self.slot_hours());
            }
        }
        next.slot = t + 1;
        next.cumulative_cost += rec.cost();
        rec.step_seconds = start.elapsed().as_secs_f64();
        Ok((rec, next))
    }

    pub fn run_dynamic(&self) -> Result<EpisodeReport> {
        let start = Instant::now();
        let mut state = MpcState::new(self.scenario);
        let mut slots = Vec::with_capacity(self.scenario.time.num_slots);
        let mut s1_total = 0.0;
        let mut s2_total = 0.0;
        while state.slot < self.scenario.time.num_slots {
            let (rec, next) = self.step(&state)?;
            log::debug!("slot {}: cost {:.3} in {:.2}s", rec.slot, rec.cost(), rec.step_seconds);
            s1_total += rec.stage1_slot_cost;
            s2_total += rec.cost();
            slots.push(rec);
            state = next;
        }
        Ok(self.report(slots, s1_total, s2_total, start.elapsed().as_secs_f64()))
    }

    pub fn run_static(&self) -> Result<EpisodeReport> {
        let start = Instant::now();
        let num_slots = self.scenario.time.num_slots;
        let state = MpcState::new(self.scenario);
        let ids: Vec<usize> = (0..self.scenario.tasks.len()).collect();
        let hp = self.horizon(0, num_slots - 1, &ids, &state.remaining_kwh)?;
        let (s1, s2) = match self.two_stage(&hp, Penalized::All) {
            Ok(r) => r,
            Err(Error::Infeasible(_) | Error::Solver(_)) if self.config.angle_limits => {
                log::warn!("static plan failed; retrying without angle limits");
                let mut relaxed = self.config.clone();
                relaxed.angle_limits = false;
                let s1 = stage1_solve(&hp, &relaxed.stage1())?;
                let s2 = stage2_solve(&hp, &s1.schedule, &relaxed.stage2(Penalized::All))?;
                (s1, s2)
            }
            Err(e) => return Err(e),
        };
        let elapsed = start.elapsed().as_secs_f64();
        let mut slots = Vec::with_capacity(num_slots);
        for t in 0..num_slots {
            let mut rec = self.record_slot(&hp, t, &s1.schedule, &s2.solution, s2.voltage_at(t))?;
            rec.stage1_slot_cost = s1.relaxed.slot_cost(t);
            rec.connected.retain(|&id| self.scenario.tasks[id].in_window(t));
            rec.step_seconds = elapsed / num_slots as f64;
            if t == 0 {
                rec.stage1 = Some((&s1).into());
                rec.stage2 = Some((&s2).into());
            }
            slots.push(rec);
        }
        Ok(self.report(slots, s1.relaxed_value(), s2.total_cost(), elapsed))
    }

    pub fn run(&self) -> Result<EpisodeReport> {
        match self.config.mode {
            Mode::Dynamic => self.run_dynamic(),
            Mode::Static => self.run_static(),
        }
    }

    fn report(&self, slots: Vec<SlotRecord>, s1_total: f64, s2_total: f64, seconds: f64) -> EpisodeReport {
        let sh = self.slot_hours();
        let tasks = self
            .scenario
            .tasks
            .iter()
            .map(|t| {
                let per_slot = t.energy_per_slot_kwh(sh);
                let charged = slots
                    .iter()
                    .filter(|s| s.slot <= t.departure && s.charging.contains(&t.id))
                    .count();
                let delivered = charged as f64 * per_slot;
                let demand = t.energy_demand_kwh();
                TaskRecord {
                    task_id: t.id,
                    station: t.station.0,
                    arrival: t.arrival,
                    departure: t.departure,
                    demand_kwh: demand,
                    delivered_kwh: delivered,
                    energy_per_slot_kwh: per_slot,
                    slots_charged: charged,
                    completed: delivered >= demand - 1e-9 * demand.max(1.0),
                    overshoot_kwh: delivered - demand,
                }
            })
            .collect();
        let generation_cost: f64 = slots.iter().map(|s| s.generation_cost).sum();
        let charging_cost: f64 = slots.iter().map(|s| s.charging_cost).sum();
        let n = slots.len().max(1) as f64;
        EpisodeReport {
            case: self.grid.name.clone(),
            profile: self.scenario.profile.name.clone(),
            seed: self.scenario.seed,
            config: self.config.clone(),
            num_slots: self.scenario.time.num_slots,
            slot_hours: sh,
            binary_variable_count: self.scenario.binary_variable_count(),
            fallbacks: slots.iter().filter(|s| s.fallback.is_some()).count(),
            mean_step_seconds: match self.config.mode {
                Mode::Dynamic => slots.iter().map(|s| s.step_seconds).sum::<f64>() / n,
                Mode::Static => seconds,
            },
            slots,
            tasks,
            totals: Totals {
                generation_cost,
                charging_cost,
                total_cost: generation_cost + charging_cost,
                stage1_objective: s1_total,
                stage2_objective: s2_total,
            },
            total_seconds: seconds,
        }
    }
}

/// Run the rolling-horizon controller over the whole scenario.
pub fn run_dynamic(grid: &GridCase, scenario: &Scenario, config: &ControllerConfig) -> Result<EpisodeReport> {
    let config = ControllerConfig {
        mode: Mode::Dynamic,
        ..config.clone()
    };
    Episode::new(grid, scenario, config)?.run_dynamic()
}

/// Plan the whole day at once with every task known in advance.
pub fn run_static(grid: &GridCase, scenario: &Scenario, config: &ControllerConfig) -> Result<EpisodeReport> {
    let config = ControllerConfig {
        mode: Mode::Static,
        ..config.clone()
    };
    Episode::new(grid, scenario, config)?.run_static()
}
