//! Gram-matrix relaxation of the multi-slot OPF with PEV charging.
//!
//! For every slot `t'` of a horizon the program carries a Hermitian
//! `W(t') ⪰ 0` standing in for `V Vᴴ`, the generator outputs, and one
//! charging variable per connected task and slot of its window. The rank-one
//! condition on `W` is dropped; [`TauMode`] selects how the charging
//! variables are treated.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{Complex64, GridCase};
use crate::linalg::top_eigen;
use crate::scenario::{slots_for_energy, ChargingSchedule, ChargingTask, LoadTable, Profile, ScheduleMode};
use crate::sdp::{self, ConicProgram, ConicSolution, HermitianBlock, LinExpr, SolveOptions, Status, VarId};

/// A connected task as seen from one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTask {
    pub task_id: usize,
    /// Position of the charging station's bus.
    pub bus: usize,
    /// Absolute slots `[lo, hi]` in which the task may charge.
    pub window: (usize, usize),
    pub rate_kw: f64,
    pub energy_per_slot_kwh: f64,
    pub remaining_kwh: f64,
    /// Charging slots still needed, `⌈remaining / energy_per_slot⌉`.
    pub required_slots: usize,
}

impl HorizonTask {
    /// View of `task` from slot `from` on, with `remaining_kwh` still to deliver.
    pub fn new(task: &ChargingTask, grid: &GridCase, from: usize, remaining_kwh: f64, slot_hours: f64) -> Result<Self> {
        let per_slot = task.energy_per_slot_kwh(slot_hours);
        Ok(HorizonTask {
            task_id: task.id,
            bus: grid.bus_index(task.station)?,
            window: (task.arrival.max(from), task.departure),
            rate_kw: task.rate_kw,
            energy_per_slot_kwh: per_slot,
            remaining_kwh,
            required_slots: slots_for_energy(remaining_kwh, per_slot),
        })
    }

    pub fn window_len(&self) -> usize {
        (self.window.1 + 1).saturating_sub(self.window.0)
    }
}

/// One horizon `[first_slot, first_slot + num_slots)` of the scheduling problem.
#[derive(Debug, Clone)]
pub struct HorizonProblem<'g> {
    pub grid: &'g GridCase,
    pub first_slot: usize,
    pub num_slots: usize,
    pub slot_hours: f64,
    /// Per horizon slot, per bus, per-unit.
    pub load_p: Vec<Vec<f64>>,
    pub load_q: Vec<Vec<f64>>,
    /// Charging price per horizon slot, $/kWh.
    pub price: Vec<f64>,
    pub tasks: Vec<HorizonTask>,
}

impl<'g> HorizonProblem<'g> {
    pub fn new(
        grid: &'g GridCase,
        loads: &LoadTable,
        profile: &Profile,
        slot_hours: f64,
        slots: std::ops::RangeInclusive<usize>,
        tasks: Vec<HorizonTask>,
    ) -> Result<Self> {
        let (first, last) = (*slots.start(), *slots.end());
        if last < first || last >= loads.p.len() || last >= profile.price.len() {
            return Err(Error::Domain(format!("horizon [{first}, {last}] outside the scenario")));
        }
        let hp = HorizonProblem {
            grid,
            first_slot: first,
            num_slots: last + 1 - first,
            slot_hours,
            load_p: loads.p[first..=last].to_vec(),
            load_q: loads.q[first..=last].to_vec(),
            price: profile.price[first..=last].to_vec(),
            tasks,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn last_slot(&self) -> usize {
        self.first_slot + self.num_slots - 1
    }

    pub fn slots(&self) -> std::ops::Range<usize> {
        self.first_slot..self.first_slot + self.num_slots
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_slots == 0 {
            return Err(Error::Domain("empty horizon".into()));
        }
        let n = self.grid.num_buses();
        if self.load_p.len() != self.num_slots
            || self.load_q.len() != self.num_slots
            || self.price.len() != self.num_slots
            || self.load_p.iter().chain(&self.load_q).any(|r| r.len() != n)
        {
            return Err(Error::Domain("load or price table does not match the horizon".into()));
        }
        for task in &self.tasks {
            let (lo, hi) = task.window;
            if lo < self.first_slot || hi > self.last_slot() || lo > hi {
                return Err(Error::Domain(format!(
                    "task {} window [{lo}, {hi}] outside horizon [{}, {}]",
                    task.task_id,
                    self.first_slot,
                    self.last_slot()
                )));
            }
            if task.required_slots > task.window_len() {
                return Err(Error::Infeasible(format!(
                    "task {} needs {} more slots but only {} remain before departure",
                    task.task_id,
                    task.required_slots,
                    task.window_len()
                )));
            }
        }
        Ok(())
    }

    pub fn windows(&self) -> Vec<(usize, usize)> {
        self.tasks.iter().map(|t| t.window).collect()
    }

    pub fn required(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.required_slots).collect()
    }

    /// Σ τ̄ over the connected tasks.
    pub fn total_required(&self) -> usize {
        self.tasks.iter().map(|t| t.required_slots).sum()
    }

    /// Number of charging variables, Σ window lengths.
    pub fn binary_variable_count(&self) -> usize {
        self.tasks.iter().map(|t| t.window_len()).sum()
    }

    /// Charging cost of one slot of `task`: `β · P̄ · δ`.
    pub fn charge_cost(&self, task: usize, slot: usize) -> f64 {
        self.price[slot - self.first_slot] * self.tasks[task].rate_kw * self.slot_hours
    }

    fn empty_schedule(&self, mode: ScheduleMode) -> ChargingSchedule {
        ChargingSchedule::zeros(
            self.tasks.iter().map(|t| t.task_id).collect(),
            self.first_slot,
            self.num_slots,
            mode,
        )
    }

    /// Generation cost of one slot, $ (MATPOWER cost curves on MW).
    pub fn generation_cost(&self, pg: &[f64]) -> f64 {
        self.grid
            .generators
            .iter()
            .zip(pg)
            .map(|(g, &p)| g.cost.eval_mw(p * self.grid.base_mva))
            .sum()
    }

    /// Per-bus PEV draw (p.u.) in `slot` under `tau`.
    pub fn pev_draw(&self, tau: &ChargingSchedule, slot: usize) -> Vec<f64> {
        let mut draw = vec![0.0; self.grid.num_buses()];
        for (row, task) in self.tasks.iter().enumerate() {
            draw[task.bus] += self.grid.kw_to_pu(task.rate_kw) * tau.get(row, slot);
        }
        draw
    }
}

/// How the charging variables enter the program.
#[derive(Debug, Clone, Copy)]
pub enum TauMode<'a> {
    /// `τ ∈ [0, 1]` with the energy rows `Σ u_h P̄ δ τ ≥ remaining`.
    Relaxed,
    /// `τ ∈ [0, 1]` with the slot counts `Σ τ = τ̄` per task.
    SlotCount,
    /// `τ` substituted by a given schedule; no charging variables.
    Fixed(&'a ChargingSchedule),
}

#[derive(Debug, Clone, Copy)]
pub struct SdrOptions<'a> {
    pub tau: TauMode<'a>,
    /// Enforce the line phase-angle limits.
    pub angle_limits: bool,
}

impl Default for SdrOptions<'_> {
    fn default() -> Self {
        SdrOptions {
            tau: TauMode::Relaxed,
            angle_limits: true,
        }
    }
}

/// Where each quantity of a horizon lives in the conic program.
#[derive(Debug, Clone)]
pub struct SdrLayout {
    pub first_slot: usize,
    pub blocks: Vec<HermitianBlock>,
    /// `[slot][generator]`
    pub pg: Vec<Vec<VarId>>,
    pub qg: Vec<Vec<VarId>>,
    /// `[task][slot - first_slot]`, `None` outside the window or when fixed.
    pub tau: Vec<Vec<Option<VarId>>>,
    /// Fixed schedule when built with [`TauMode::Fixed`].
    pub fixed_tau: Option<ChargingSchedule>,
}

impl SdrLayout {
    pub fn tau_vars(&self) -> impl Iterator<Item = (usize, usize, VarId)> + '_ {
        self.tau.iter().enumerate().flat_map(move |(row, slots)| {
            slots
                .iter()
                .enumerate()
                .filter_map(move |(off, v)| v.map(|v| (row, self.first_slot + off, v)))
        })
    }
}

/// Build the relaxed horizon program. The objective is
/// `Σ_t' Σ_g f(P_g) + Σ_t' Σ_tasks β P̄ δ τ` (the charging term is left out
/// when `τ` is fixed, since it is then constant).
pub fn build_sdr(hp: &HorizonProblem<'_>, opts: &SdrOptions<'_>) -> Result<(ConicProgram, SdrLayout)> {
    hp.validate()?;
    let grid = hp.grid;
    let n = grid.num_buses();
    let base = grid.base_mva;
    if let TauMode::Fixed(fixed) = opts.tau {
        check_fixed(hp, fixed)?;
    }

    let mut prog = ConicProgram::new();
    let mut layout = SdrLayout {
        first_slot: hp.first_slot,
        blocks: Vec::with_capacity(hp.num_slots),
        pg: Vec::with_capacity(hp.num_slots),
        qg: Vec::with_capacity(hp.num_slots),
        tau: vec![vec![None; hp.num_slots]; hp.tasks.len()],
        fixed_tau: match opts.tau {
            TauMode::Fixed(s) => Some(s.clone()),
            _ => None,
        },
    };

    // Charging variables.
    if !matches!(opts.tau, TauMode::Fixed(_)) {
        for (row, task) in hp.tasks.iter().enumerate() {
            for slot in task.window.0..=task.window.1 {
                let v = prog.add_var(format!("tau{}_{slot}", task.task_id), Some(0.0), Some(1.0));
                layout.tau[row][slot - hp.first_slot] = Some(v);
                prog.add_objective(&v.into(), hp.charge_cost(row, slot));
            }
        }
    }

    // Angle-limit pairs, deduplicated over parallel lines.
    let mut angle_pairs: Vec<(usize, usize, f64)> = Vec::new();
    if opts.angle_limits {
        for (l, line) in grid.lines.iter().enumerate() {
            let k = grid.bus_index(line.from)?;
            let m = grid.bus_index(line.to)?;
            let theta = grid.line_angle_limit(l);
            let (a, b) = if k > m { (k, m) } else { (m, k) };
            match angle_pairs.iter_mut().find(|p| p.0 == a && p.1 == b) {
                Some(p) => p.2 = p.2.min(theta),
                None => angle_pairs.push((a, b, theta)),
            }
        }
    }

    for off in 0..hp.num_slots {
        let slot = hp.first_slot + off;
        let w = prog.add_hermitian_psd(n, &format!("W{slot}"));

        let mut pg = Vec::with_capacity(grid.generators.len());
        let mut qg = Vec::with_capacity(grid.generators.len());
        for (gi, g) in grid.generators.iter().enumerate() {
            let p = prog.add_var(format!("pg{gi}_{slot}"), Some(g.p_min), Some(g.p_max));
            let q = prog.add_var(format!("qg{gi}_{slot}"), Some(g.q_min), Some(g.q_max));
            prog.add_objective(&p.into(), g.cost.c1 * base);
            prog.add_objective(&LinExpr::constant(g.cost.c0), 1.0);
            prog.add_quadratic_cost(p.into(), g.cost.c2 * base * base)?;
            pg.push(p);
            qg.push(q);
        }

        for k in 0..n {
            // Σ_m (W_kk − W_km) y*_km = S_k
            let mut p_expr = LinExpr::zero();
            let mut q_expr = LinExpr::zero();
            for &(m, y) in grid.neighbors_by_index(k) {
                let (g, b) = (y.re, y.im);
                let dre = w.re(k, k) - w.re(k, m);
                let dim = -w.im(k, m);
                // (dre + j dim)(g − j b)
                p_expr += dre.clone() * g + dim.clone() * b;
                q_expr += dim * g - dre * b;
            }
            for (gi, _) in grid.generators_at(k) {
                p_expr = p_expr - pg[gi].into();
                q_expr = q_expr - qg[gi].into();
            }
            let mut p_rhs = -hp.load_p[off][k];
            match opts.tau {
                TauMode::Fixed(fixed) => {
                    for (row, task) in hp.tasks.iter().enumerate() {
                        if task.bus == k {
                            p_rhs -= grid.kw_to_pu(task.rate_kw) * fixed.get(row, slot);
                        }
                    }
                }
                _ => {
                    for (row, task) in hp.tasks.iter().enumerate() {
                        if let (true, Some(v)) = (task.bus == k, layout.tau[row][off]) {
                            p_expr.add_term(v, grid.kw_to_pu(task.rate_kw));
                        }
                    }
                }
            }
            prog.add_eq(p_expr, p_rhs);
            prog.add_eq(q_expr, -hp.load_q[off][k]);

            let bus = &grid.buses[k];
            let (lo, hi) = (bus.v_min * bus.v_min, bus.v_max * bus.v_max);
            if lo == hi {
                prog.add_eq(w.re(k, k), lo);
            } else {
                prog.add_ge(w.re(k, k), lo);
                prog.add_le(w.re(k, k), hi);
            }
        }

        for &(a, b, theta) in &angle_pairs {
            // |Im W_ab| ≤ Re W_ab · tan θ
            let t = theta.tan();
            prog.add_le(w.im(a, b) - w.re(a, b) * t, 0.0);
            prog.add_le(-w.im(a, b) - w.re(a, b) * t, 0.0);
        }

        layout.blocks.push(w);
        layout.pg.push(pg);
        layout.qg.push(qg);
    }

    match opts.tau {
        TauMode::Relaxed => {
            for (row, task) in hp.tasks.iter().enumerate() {
                let mut e = LinExpr::zero();
                for v in layout.tau[row].iter().flatten() {
                    e.add_term(*v, task.energy_per_slot_kwh);
                }
                prog.add_ge(e, task.remaining_kwh);
            }
        }
        TauMode::SlotCount => {
            for (row, task) in hp.tasks.iter().enumerate() {
                let mut e = LinExpr::zero();
                for v in layout.tau[row].iter().flatten() {
                    e.add_term(*v, 1.0);
                }
                prog.add_eq(e, task.required_slots as f64);
            }
        }
        TauMode::Fixed(_) => {}
    }

    Ok((prog, layout))
}

fn check_fixed(hp: &HorizonProblem<'_>, fixed: &ChargingSchedule) -> Result<()> {
    let ids: Vec<usize> = hp.tasks.iter().map(|t| t.task_id).collect();
    if fixed.task_ids != ids || fixed.first_slot != hp.first_slot || fixed.num_slots != hp.num_slots {
        return Err(Error::Domain("fixed schedule does not match the horizon's tasks and slots".into()));
    }
    if fixed.mode != ScheduleMode::Binary {
        return Err(Error::Domain("fixed schedule must be binary".into()));
    }
    for (row, task) in hp.tasks.iter().enumerate() {
        for slot in hp.slots() {
            let v = fixed.get(row, slot);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Domain(format!("task {} slot {slot}: fixed value {v} is not binary", task.task_id)));
            }
            if v == 1.0 && (slot < task.window.0 || slot > task.window.1) {
                return Err(Error::Domain(format!(
                    "task {} charges at slot {slot} outside its window",
                    task.task_id
                )));
            }
        }
        let delivered = fixed.row_sum(row) * task.energy_per_slot_kwh;
        if delivered < task.remaining_kwh - 1e-9 {
            return Err(Error::Infeasible(format!(
                "fixed schedule delivers {delivered} kWh to task {}, needs {}",
                task.task_id, task.remaining_kwh
            )));
        }
    }
    Ok(())
}

/// Solver outcome echoed in reports.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveSummary {
    pub status: Status,
    pub iterations: usize,
    pub objective: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl From<&ConicSolution> for SolveSummary {
    fn from(s: &ConicSolution) -> Self {
        SolveSummary {
            status: s.status,
            iterations: s.iterations,
            objective: s.objective,
            gap: s.gap,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
        }
    }
}

/// Values of one solved horizon program.
#[derive(Debug, Clone)]
pub struct HorizonSolution {
    pub first_slot: usize,
    pub w: Vec<DMatrix<Complex64>>,
    /// `[slot][generator]`, per-unit.
    pub pg: Vec<Vec<f64>>,
    pub qg: Vec<Vec<f64>>,
    pub tau: ChargingSchedule,
    /// Per slot, $.
    pub generation_cost: Vec<f64>,
    pub charging_cost: Vec<f64>,
    pub solver: SolveSummary,
}

impl HorizonSolution {
    pub fn total_cost(&self) -> f64 {
        self.generation_cost.iter().sum::<f64>() + self.charging_cost.iter().sum::<f64>()
    }

    pub fn slot_cost(&self, slot: usize) -> f64 {
        let off = slot - self.first_slot;
        self.generation_cost[off] + self.charging_cost[off]
    }

    pub fn w_at(&self, slot: usize) -> &DMatrix<Complex64> {
        &self.w[slot - self.first_slot]
    }
}

/// Read a solution back into horizon quantities.
pub fn extract(hp: &HorizonProblem<'_>, layout: &SdrLayout, sol: &ConicSolution) -> HorizonSolution {
    let mut tau = match &layout.fixed_tau {
        Some(s) => s.clone(),
        None => hp.empty_schedule(ScheduleMode::Relaxed),
    };
    if layout.fixed_tau.is_none() {
        for (row, slot, v) in layout.tau_vars() {
            tau.set(row, slot, sol.value(v).clamp(0.0, 1.0));
        }
    }
    let w: Vec<_> = layout.blocks.iter().map(|b| sol.hermitian(b)).collect();
    let pg: Vec<Vec<f64>> = layout.pg.iter().map(|r| r.iter().map(|&v| sol.value(v)).collect()).collect();
    let qg: Vec<Vec<f64>> = layout.qg.iter().map(|r| r.iter().map(|&v| sol.value(v)).collect()).collect();
    let generation_cost = pg.iter().map(|p| hp.generation_cost(p)).collect();
    let charging_cost = hp
        .slots()
        .map(|slot| (0..hp.tasks.len()).map(|row| hp.charge_cost(row, slot) * tau.get(row, slot)).sum())
        .collect();
    HorizonSolution {
        first_slot: hp.first_slot,
        w,
        pg,
        qg,
        tau,
        generation_cost,
        charging_cost,
        solver: sol.into(),
    }
}

/// Accept a conic solution as usable, or turn it into an error.
pub(crate) fn accept(sol: &ConicSolution, opts: &SolveOptions, what: &str) -> Result<()> {
    match sol.status {
        Status::Optimal => Ok(()),
        Status::PrimalInfeasible => Err(Error::Infeasible(format!("{what} is infeasible"))),
        Status::DualInfeasible => Err(Error::Solver(format!("{what} is unbounded"))),
        Status::MaxIter => {
            let loose = 1e2;
            if sol.primal_residual <= loose * opts.tol_feas
                && sol.dual_residual <= loose * opts.tol_feas
                && sol.gap <= loose * opts.tol_gap * sol.objective.abs().max(1.0)
            {
                log::info!(
                    "{what}: stopped after {} iterations short of tolerance (pres {:.1e}, dres {:.1e}); using best iterate",
                    sol.iterations,
                    sol.primal_residual,
                    sol.dual_residual
                );
                Ok(())
            } else {
                Err(Error::Solver(format!(
                    "{what}: no convergence after {} iterations (pres {:.1e}, dres {:.1e}, gap {:.1e})",
                    sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
                )))
            }
        }
    }
}

/// Build, solve and extract in one go.
pub fn solve_sdr(hp: &HorizonProblem<'_>, opts: &SdrOptions<'_>, solve_opts: &SolveOptions) -> Result<HorizonSolution> {
    let (prog, layout) = build_sdr(hp, opts)?;
    let sol = sdp::solve(&prog, solve_opts)?;
    accept(&sol, solve_opts, "horizon relaxation")?;
    Ok(extract(hp, &layout, &sol))
}

/// `V = √λmax · w_max` with the phase of bus 0 rotated to zero.
pub fn recover_voltage(w: &DMatrix<Complex64>) -> Vec<Complex64> {
    let top = top_eigen(w);
    let scale = top.value.max(0.0).sqrt();
    let mut v: Vec<Complex64> = top.vector.iter().map(|z| z * scale).collect();
    normalize_phase(&mut v);
    v
}

/// Rotate `v` so that its first nonzero entry is real and positive.
pub fn normalize_phase(v: &mut [Complex64]) {
    if let Some(r) = v.iter().find(|z| z.norm() > 1e-14) {
        let rot = r.conj() / r.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Largest per-bus mismatch `|V_k (Σ_m y_km (V_k − V_m))* − S_k|`, per-unit,
/// where `S_k` is generation minus load minus PEV draw at bus `k`.
pub fn recovered_balance_residual(
    case: &GridCase,
    v: &[Complex64],
    pg: &[f64],
    qg: &[f64],
    load_p: &[f64],
    load_q: &[f64],
    pev_draw: &[f64],
) -> Result<f64> {
    let n = case.num_buses();
    if v.len() != n || load_p.len() != n || load_q.len() != n || pev_draw.len() != n {
        return Err(Error::Domain("voltage/load vectors do not match the bus count".into()));
    }
    if pg.len() != case.generators.len() || qg.len() != case.generators.len() {
        return Err(Error::Domain("generation vectors do not match the generator count".into()));
    }
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut current = Complex64::new(0.0, 0.0);
        for &(m, y) in case.neighbors_by_index(k) {
            current += y * (v[k] - v[m]);
        }
        let flow = v[k] * current.conj();
        let mut s = Complex64::new(-load_p[k] - pev_draw[k], -load_q[k]);
        for (gi, _) in case.generators_at(k) {
            s += Complex64::new(pg[gi], qg[gi]);
        }
        worst = worst.max((flow - s).norm());
    }
    Ok(worst)
}

/// Largest violation of the voltage-magnitude and generator boxes, per-unit.
pub fn box_violation(case: &GridCase, v: &[Complex64], pg: &[f64], qg: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (bus, z) in case.buses.iter().zip(v) {
        let m = z.norm();
        worst = worst.max(bus.v_min - m).max(m - bus.v_max);
    }
    for (g, (&p, &q)) in case.generators.iter().zip(pg.iter().zip(qg)) {
        worst = worst.max(g.p_min - p).max(p - g.p_max).max(g.q_min - q).max(q - g.q_max);
    }
    worst
}

#[cfg(test)]
mod tests;
