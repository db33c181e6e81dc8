//! Exhaustive reference solver for toy instances.
//!
//! Once the charging schedule is fixed the day splits into independent
//! single-slot OPFs, and a slot's OPF only depends on which tasks charge in
//! it. The oracle therefore solves every (slot, charging subset) OPF once, by
//! grid search over generator set-points with a Newton power flow for the
//! remaining buses, and then enumerates all binary schedules against those
//! values. Nothing here touches the conic solver.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Complex64, GridCase};
use crate::scenario::{ChargingSchedule, LoadTable, Scenario, ScheduleMode};

pub const MAX_BUSES: usize = 4;
pub const MAX_TASKS: usize = 3;
pub const MAX_SLOTS: usize = 6;
pub const MAX_SCHEDULES_LOG2: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    /// Coarse grid step, per-unit.
    pub step: f64,
    /// Finest step reached by refinement.
    pub refine_to: f64,
    /// Coarse candidates kept for refinement.
    pub starts: usize,
    pub angle_limits: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            step: 1e-2,
            refine_to: 1e-4,
            starts: 4,
            angle_limits: true,
        }
    }
}

/// A grid plus a scenario small enough to enumerate.
#[derive(Debug, Clone)]
pub struct OracleInstance<'a> {
    pub grid: &'a GridCase,
    pub scenario: &'a Scenario,
    pub options: OracleOptions,
}

/// Best operating point of one slot for one set of charging tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOpf {
    pub generation_cost: f64,
    /// `[re, im]` per bus, phase zero at the first bus.
    pub voltage: Vec<[f64; 2]>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
}

impl SlotOpf {
    pub fn voltage_complex(&self) -> Vec<Complex64> {
        self.voltage.iter().map(|v| Complex64::new(v[0], v[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub cost: f64,
    pub generation_cost: f64,
    pub charging_cost: f64,
    pub schedule: ChargingSchedule,
    /// Operating point per slot under `schedule`.
    pub slots: Vec<SlotOpf>,
    /// Schedules enumerated and how many met every demand.
    pub enumerated: u64,
    pub feasible: u64,
}

impl OracleSolution {
    pub fn voltages(&self) -> Vec<Vec<Complex64>> {
        self.slots.iter().map(SlotOpf::voltage_complex).collect()
    }
}

impl<'a> OracleInstance<'a> {
    pub fn new(grid: &'a GridCase, scenario: &'a Scenario) -> Self {
        OracleInstance {
            grid,
            scenario,
            options: OracleOptions::default(),
        }
    }

    fn check_size(&self) -> Result<()> {
        let n = self.grid.num_buses();
        let tasks = self.scenario.tasks.len();
        let slots = self.scenario.time.num_slots;
        if n > MAX_BUSES || tasks > MAX_TASKS || slots > MAX_SLOTS {
            return Err(Error::TooLarge(format!(
                "{n} buses, {tasks} tasks, {slots} slots (limits {MAX_BUSES}, {MAX_TASKS}, {MAX_SLOTS})"
            )));
        }
        let bits: usize = self.scenario.tasks.iter().map(|t| t.window_len()).sum();
        if bits > MAX_SCHEDULES_LOG2 {
            return Err(Error::TooLarge(format!("2^{bits} schedules exceed 2^{MAX_SCHEDULES_LOG2}")));
        }
        for k in 0..n {
            if self.grid.generators_at(k).count() > 1 {
                return Err(Error::Config(format!(
                    "bus {} has more than one generator; the oracle needs one per bus",
                    self.grid.buses[k].id
                )));
            }
        }
        if self.grid.generators.is_empty() {
            return Err(Error::Config("the oracle needs at least one generator".into()));
        }
        Ok(())
    }

    fn check_windows(&self) -> Result<()> {
        let bad: Vec<String> = self
            .scenario
            .tasks
            .iter()
            .filter(|t| t.required_slots > t.window_len())
            .map(|t| format!("task {} needs {} slots in a {}-slot window", t.id, t.required_slots, t.window_len()))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Infeasible(bad.join("; ")))
        }
    }

    /// Stable key of everything that determines the answer.
    pub fn hash(&self) -> String {
        let payload = serde_json::json!({
            "grid": serde_json::from_str::<serde_json::Value>(&self.grid.to_json()).expect("grid json"),
            "scenario": self.scenario,
            "options": self.options,
        });
        hex::encode(Sha256::digest(payload.to_string().as_bytes()))
    }

    pub fn solve(&self) -> Result<OracleSolution> {
        self.check_size()?;
        self.check_windows()?;
        let sc = self.scenario;
        let grid = self.grid;
        let loads = LoadTable::build(grid, &sc.profile, &sc.time)?;
        let num_slots = sc.time.num_slots;
        let num_tasks = sc.tasks.len();
        let buses: Vec<usize> = sc
            .tasks
            .iter()
            .map(|t| grid.bus_index(t.station))
            .collect::<Result<_>>()?;

        // Which task subsets can charge in each slot.
        let mut jobs = Vec::new();
        for t in 0..num_slots {
            let present: u32 = sc
                .tasks
                .iter()
                .enumerate()
                .filter(|(_, task)| task.in_window(t))
                .fold(0, |m, (i, _)| m | 1 << i);
            for subset in 0..(1u32 << num_tasks) {
                if subset & !present == 0 {
                    jobs.push((t, subset));
                }
            }
        }
        let opfs: HashMap<(usize, u32), Option<SlotOpf>> = jobs
            .par_iter()
            .map(|&(t, subset)| {
                let mut p_load = loads.p[t].clone();
                for (i, task) in sc.tasks.iter().enumerate() {
                    if subset & (1 << i) != 0 {
                        p_load[buses[i]] += grid.kw_to_pu(task.rate_kw);
                    }
                }
                ((t, subset), slot_opf(grid, &p_load, &loads.q[t], &self.options))
            })
            .collect();

        // Enumerate: bit b of the code is (task, slot) pair b in window order.
        let pairs: Vec<(usize, usize)> = sc
            .tasks
            .iter()
            .enumerate()
            .flat_map(|(i, task)| (task.arrival..=task.departure).map(move |t| (i, t)))
            .collect();
        let total = 1u64 << pairs.len();
        let charge = |i: usize, t: usize| sc.profile.price[t] * sc.tasks[i].rate_kw * sc.time.slot_hours;
        let required: Vec<usize> = sc.tasks.iter().map(|t| t.required_slots).collect();

        let best = (0..total)
            .into_par_iter()
            .filter_map(|code| {
                let mut subsets = vec![0u32; num_slots];
                let mut count = vec![0usize; num_tasks];
                let mut cost = 0.0;
                for (b, &(i, t)) in pairs.iter().enumerate() {
                    if code & (1 << b) != 0 {
                        subsets[t] |= 1 << i;
                        count[i] += 1;
                        cost += charge(i, t);
                    }
                }
                if count.iter().zip(&required).any(|(c, r)| c < r) {
                    return None;
                }
                for (t, &s) in subsets.iter().enumerate() {
                    cost += opfs[&(t, s)].as_ref()?.generation_cost;
                }
                Some((cost, code))
            })
            .map(|(c, code)| (c, code, 1u64))
            .reduce_with(|a, b| {
                let n = a.2 + b.2;
                // Lowest cost, then lowest code, so the answer is deterministic.
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    (b.0, b.1, n)
                } else {
                    (a.0, a.1, n)
                }
            });
        let Some((cost, code, feasible)) = best else {
            return Err(Error::Infeasible(
                "no schedule meets every demand with a feasible power flow in each slot".into(),
            ));
        };

        let mut schedule = ChargingSchedule::zeros((0..num_tasks).collect(), 0, num_slots, ScheduleMode::Binary);
        let mut subsets = vec![0u32; num_slots];
        let mut charging_cost = 0.0;
        for (b, &(i, t)) in pairs.iter().enumerate() {
            if code & (1 << b) != 0 {
                schedule.set(i, t, 1.0);
                subsets[t] |= 1 << i;
                charging_cost += charge(i, t);
            }
        }
        let slots: Vec<SlotOpf> = subsets
            .iter()
            .enumerate()
            .map(|(t, s)| opfs[&(t, *s)].clone().expect("chosen slots are feasible"))
            .collect();
        Ok(OracleSolution {
            cost,
            generation_cost: slots.iter().map(|s| s.generation_cost).sum(),
            charging_cost,
            schedule,
            slots,
            enumerated: total,
            feasible,
        })
    }

    /// [`solve`](Self::solve) through a directory of JSON results keyed by [`hash`](Self::hash).
    pub fn solve_cached(&self, dir: impl AsRef<Path>) -> Result<OracleSolution> {
        let path = cache_path(dir.as_ref(), &self.hash());
        if let Ok(text) = std::fs::read_to_string(&path) {
            match serde_json::from_str(&text) {
                Ok(sol) => return Ok(sol),
                Err(e) => log::warn!("ignoring unreadable oracle cache {}: {e}", path.display()),
            }
        }
        let sol = self.solve()?;
        std::fs::create_dir_all(dir.as_ref()).map_err(|e| Error::io(dir.as_ref(), e))?;
        let text = serde_json::to_string_pretty(&sol).expect("oracle result serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(sol)
    }
}

fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("oracle-{}.json", &hash[..16]))
}

/// Solve the polar power flow for the given generator set-points.
///
/// The first generator's bus is the reference (angle zero, free `P`); the
/// other generator buses hold `P` and `|V|`, the rest hold `P` and `Q`.
struct PowerFlow<'g> {
    grid: &'g GridCase,
    reference: usize,
    gen_bus: Vec<Option<usize>>,
}

impl<'g> PowerFlow<'g> {
    fn new(grid: &'g GridCase) -> Self {
        let mut gen_bus = vec![None; grid.num_buses()];
        for (gi, g) in grid.generators.iter().enumerate() {
            let k = grid.bus_index(g.bus).expect("validated case");
            gen_bus[k] = Some(gi);
        }
        let reference = grid.bus_index(grid.generators[0].bus).expect("validated case");
        PowerFlow {
            grid,
            reference,
            gen_bus,
        }
    }

    fn injections(&self, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        (0..v.len())
            .map(|k| {
                let mut i = Complex64::new(0.0, 0.0);
                for &(m, y) in self.grid.neighbors_by_index(k) {
                    i += y * (v[k] - v[m]);
                }
                v[k] * i.conj()
            })
            .collect()
    }

    /// `vm` carries the set-points at generator buses and is overwritten at
    /// the others; `p_spec` is the net injection at every non-reference bus.
    fn solve(&self, vm: &mut [f64], p_spec: &[f64], q_spec: &[f64]) -> Option<Vec<f64>> {
        let n = vm.len();
        let mut va = vec![0.0; n];
        for k in 0..n {
            if self.gen_bus[k].is_none() {
                vm[k] = 1.0;
            }
        }
        let ang: Vec<usize> = (0..n).filter(|&k| k != self.reference).collect();
        let mag: Vec<usize> = (0..n).filter(|&k| self.gen_bus[k].is_none()).collect();
        let dim = ang.len() + mag.len();
        if dim == 0 {
            return Some(va);
        }
        let mismatch = |vm: &[f64], va: &[f64]| -> DVector<f64> {
            let s = self.injections(vm, va);
            let mut f = DVector::zeros(dim);
            for (r, &k) in ang.iter().enumerate() {
                f[r] = s[k].re - p_spec[k];
            }
            for (r, &k) in mag.iter().enumerate() {
                f[ang.len() + r] = s[k].im - q_spec[k];
            }
            f
        };
        for _ in 0..40 {
            let f = mismatch(vm, &va);
            if f.amax() < 1e-11 {
                return Some(va);
            }
            let mut jac = DMatrix::zeros(dim, dim);
            let h = 1e-7;
            for (c, (is_ang, k)) in ang.iter().map(|&k| (true, k)).chain(mag.iter().map(|&k| (false, k))).enumerate() {
                let (mut vm2, mut va2) = (vm.to_vec(), va.clone());
                let (mut vm3, mut va3) = (vm.to_vec(), va.clone());
                if is_ang {
                    va2[k] += h;
                    va3[k] -= h;
                } else {
                    vm2[k] += h;
                    vm3[k] -= h;
                }
                let col = (mismatch(&vm2, &va2) - mismatch(&vm3, &va3)) / (2.0 * h);
                jac.set_column(c, &col);
            }
            let dx = jac.lu().solve(&(-f))?;
            for (r, &k) in ang.iter().enumerate() {
                va[k] += dx[r];
            }
            for (r, &k) in mag.iter().enumerate() {
                vm[k] += dx[ang.len() + r];
                if !(vm[k] > 0.2 && vm[k] < 2.0) {
                    return None;
                }
            }
        }
        None
    }
}

/// Search coordinates: `|V|` at every generator bus, then `P` at every
/// generator but the reference one.
struct Search<'g> {
    pf: PowerFlow<'g>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    p_load: Vec<f64>,
    q_load: Vec<f64>,
    angle_limits: bool,
}

impl Search<'_> {
    fn evaluate(&self, x: &[f64]) -> Option<SlotOpf> {
        let grid = self.pf.grid;
        let n = grid.num_buses();
        let ng = grid.generators.len();
        let mut vm = vec![1.0; n];
        let mut pg = vec![0.0; ng];
        for (gi, g) in grid.generators.iter().enumerate() {
            vm[grid.bus_index(g.bus).ok()?] = x[gi];
            if gi > 0 {
                pg[gi] = x[ng + gi - 1];
            }
        }
        let mut p_spec = vec![0.0; n];
        let mut q_spec = vec![0.0; n];
        for k in 0..n {
            p_spec[k] = -self.p_load[k];
            q_spec[k] = -self.q_load[k];
            if let Some(gi) = self.pf.gen_bus[k] {
                p_spec[k] += pg[gi];
            }
        }
        let va = self.pf.solve(&mut vm, &p_spec, &q_spec)?;
        let s = self.pf.injections(&vm, &va);
        let mut qg = vec![0.0; ng];
        for k in 0..n {
            let bus = &grid.buses[k];
            if vm[k] < bus.v_min - 1e-12 || vm[k] > bus.v_max + 1e-12 {
                return None;
            }
            if let Some(gi) = self.pf.gen_bus[k] {
                qg[gi] = s[k].im + self.q_load[k];
                if gi == 0 {
                    pg[0] = s[k].re + self.p_load[k];
                }
            }
        }
        for (g, (&p, &q)) in grid.generators.iter().zip(pg.iter().zip(&qg)) {
            if p < g.p_min - 1e-12 || p > g.p_max + 1e-12 || q < g.q_min - 1e-12 || q > g.q_max + 1e-12 {
                return None;
            }
        }
        if self.angle_limits {
            for (l, line) in grid.lines.iter().enumerate() {
                let a = grid.bus_index(line.from).ok()?;
                let b = grid.bus_index(line.to).ok()?;
                let mut d = (va[a] - va[b]).abs() % std::f64::consts::TAU;
                if d > std::f64::consts::PI {
                    d = std::f64::consts::TAU - d;
                }
                if d > grid.line_angle_limit(l) + 1e-12 {
                    return None;
                }
            }
        }
        let cost = grid
            .generators
            .iter()
            .zip(&pg)
            .map(|(g, &p)| g.cost.eval_mw(p * grid.base_mva))
            .sum();
        let rot = -va[0];
        let voltage = vm
            .iter()
            .zip(&va)
            .map(|(&m, &a)| {
                let z = Complex64::from_polar(m, a + rot);
                [z.re, z.im]
            })
            .collect();
        Some(SlotOpf {
            generation_cost: cost,
            voltage,
            pg,
            qg,
        })
    }

    /// Points of a box grid with spacing `step` around `center` (or over the
    /// whole box when `center` is `None`), clipped to the bounds.
    fn axis(&self, d: usize, step: f64, center: Option<f64>, radius: usize) -> Vec<f64> {
        let (lo, hi) = match center {
            Some(c) => (
                (c - radius as f64 * step).max(self.lo[d]),
                (c + radius as f64 * step).min(self.hi[d]),
            ),
            None => (self.lo[d], self.hi[d]),
        };
        if hi <= lo {
            return vec![lo];
        }
        let count = ((hi - lo) / step).round() as usize;
        let mut pts: Vec<f64> = (0..=count).map(|i| (lo + i as f64 * step).min(hi)).collect();
        if (pts[pts.len() - 1] - hi).abs() > 1e-12 {
            pts.push(hi);
        }
        pts
    }

    fn grid_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for ax in axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn best_of(&self, points: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>, SlotOpf)> {
        let mut found: Vec<(f64, Vec<f64>, SlotOpf)> = points
            .into_iter()
            .filter_map(|x| self.evaluate(&x).map(|o| (o.generation_cost, x, o)))
            .collect();
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.partial_cmp(&b.1).expect("finite")));
        found
    }

    /// Refine one candidate down to `fine`, a decade at a time.
    fn refine(&self, mut best: (f64, Vec<f64>, SlotOpf), coarse: f64, fine: f64) -> (f64, Vec<f64>, SlotOpf) {
        let dims = self.lo.len();
        let mut step = coarse;
        while step > fine * (1.0 + 1e-9) {
            step = (step / 10.0).max(fine);
            // Full local grid while small, coordinate sweeps otherwise.
            if 21usize.pow(dims as u32) <= 200_000 {
                let axes: Vec<Vec<f64>> = (0..dims).map(|d| self.axis(d, step, Some(best.1[d]), 10)).collect();
                if let Some(b) = self.best_of(Self::grid_points(&axes)).into_iter().next() {
                    if b.0 <= best.0 {
                        best = b;
                    }
                }
            } else {
                for _ in 0..4 {
                    for d in 0..dims {
                        let pts = self.axis(d, step, Some(best.1[d]), 10).into_iter().map(|v| {
                            let mut x = best.1.clone();
                            x[d] = v;
                            x
                        });
                        if let Some(b) = self.best_of(pts.collect()).into_iter().next() {
                            if b.0 <= best.0 {
                                best = b;
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Cheapest operating point of one slot with the given per-bus loads, or
/// `None` when no grid point is feasible.
pub fn slot_opf(grid: &GridCase, p_load: &[f64], q_load: &[f64], opts: &OracleOptions) -> Option<SlotOpf> {
    let pf = PowerFlow::new(grid);
    let ng = grid.generators.len();
    let mut lo = Vec::with_capacity(2 * ng - 1);
    let mut hi = Vec::with_capacity(2 * ng - 1);
    for g in &grid.generators {
        let bus = &grid.buses[grid.bus_index(g.bus).ok()?];
        lo.push(bus.v_min);
        hi.push(bus.v_max);
    }
    for g in grid.generators.iter().skip(1) {
        lo.push(g.p_min);
        hi.push(g.p_max);
    }
    let search = Search {
        pf,
        lo,
        hi,
        p_load: p_load.to_vec(),
        q_load: q_load.to_vec(),
        angle_limits: opts.angle_limits,
    };
    let axes: Vec<Vec<f64>> = (0..search.lo.len()).map(|d| search.axis(d, opts.step, None, 0)).collect();
    let coarse = search.best_of(Search::grid_points(&axes));
    coarse
        .into_iter()
        .take(opts.starts.max(1))
        .map(|c| search.refine(c, opts.step, opts.refine_to))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.partial_cmp(&b.1).expect("finite")))
        .map(|b| b.2)
}

pub fn oracle_solve(grid: &GridCase, scenario: &Scenario) -> Result<OracleSolution> {
    OracleInstance::new(grid, scenario).solve()
}
