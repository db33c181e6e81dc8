//! Charging tasks, time slotting, residential profiles and the stochastic
//! fleet generator.
//!
//! Slots are 0-based: slot 0 covers 18:00-18:30 with the default grid. A task
//! window `[arrival, departure]` is inclusive on both ends.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, GridCase};

/// Mean and spread of PEV arrival times, wall-clock hours.
pub const ARRIVAL_MEAN_HOUR: f64 = 20.0;
pub const ARRIVAL_SD_HOURS: f64 = 1.5;
/// Arrivals are truncated to `[18:00, 24:00)`.
pub const ARRIVAL_WINDOW: (f64, f64) = (18.0, 24.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub num_slots: usize,
    /// Slot length in hours.
    pub slot_hours: f64,
    /// Wall-clock hour at which slot 0 begins.
    pub start_hour: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            num_slots: 24,
            slot_hours: 0.5,
            start_hour: 18.0,
        }
    }
}

impl TimeGrid {
    pub fn new(num_slots: usize, slot_hours: f64) -> Result<Self> {
        let grid = TimeGrid {
            num_slots,
            slot_hours,
            ..TimeGrid::default()
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_slots == 0 {
            return Err(Error::Domain("a time grid needs at least one slot".into()));
        }
        if !(self.slot_hours > 0.0 && self.slot_hours.is_finite()) {
            return Err(Error::Domain("slot duration must be positive".into()));
        }
        Ok(())
    }

    /// Wall-clock label `HH:MM` of the start of `slot`.
    pub fn slot_label(&self, slot: usize) -> String {
        let minutes = ((self.start_hour + slot as f64 * self.slot_hours) * 60.0).round() as i64;
        let minutes = minutes.rem_euclid(24 * 60);
        format!("{:02}:{:02}", minutes / 60, minutes % 60)
    }

    /// First slot boundary at or after `hour`. Arrivals in the middle of a
    /// slot only become visible at the next boundary.
    pub fn slot_at_or_after(&self, hour: f64) -> usize {
        let raw = (hour - self.start_hour) / self.slot_hours;
        let slot = (raw - 1e-9).ceil().max(0.0) as usize;
        slot.min(self.num_slots - 1)
    }
}

/// One PEV's charging request at a station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingTask {
    pub id: usize,
    pub station: BusId,
    pub pev_index: usize,
    pub arrival: usize,
    pub departure: usize,
    pub capacity_kwh: f64,
    pub initial_soc: f64,
    pub rate_kw: f64,
    pub efficiency: f64,
    pub required_slots: usize,
}

impl ChargingTask {
    pub fn energy_demand_kwh(&self) -> f64 {
        self.capacity_kwh * (1.0 - self.initial_soc)
    }

    /// Battery energy gained in one charging slot.
    pub fn energy_per_slot_kwh(&self, slot_hours: f64) -> f64 {
        self.efficiency * self.rate_kw * slot_hours
    }

    pub fn window_len(&self) -> usize {
        self.departure + 1 - self.arrival
    }

    pub fn in_window(&self, slot: usize) -> bool {
        slot >= self.arrival && slot <= self.departure
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.arrival > self.departure || self.departure >= grid.num_slots {
            return Err(Error::Validation(format!(
                "task {}: window [{}, {}] outside the {}-slot horizon",
                self.id, self.arrival, self.departure, grid.num_slots
            )));
        }
        let expected = required_slots(
            self.capacity_kwh,
            self.initial_soc,
            self.efficiency,
            self.rate_kw,
            grid.slot_hours,
        )?;
        if expected != self.required_slots {
            return Err(Error::Validation(format!(
                "task {}: required_slots {} but battery data implies {}",
                self.id, self.required_slots, expected
            )));
        }
        if self.required_slots > self.window_len() {
            return Err(Error::Infeasible(format!(
                "task {} needs {} slots but its window holds {}",
                self.id,
                self.required_slots,
                self.window_len()
            )));
        }
        Ok(())
    }
}

/// Smallest number of full-rate slots that restores a battery from `soc0` to
/// full: `ceil(C(1 - soc0) / (eff · rate · slot_hours))`.
pub fn required_slots(
    capacity_kwh: f64,
    soc0: f64,
    efficiency: f64,
    rate_kw: f64,
    slot_hours: f64,
) -> Result<usize> {
    if !(rate_kw > 0.0 && efficiency > 0.0 && efficiency <= 1.0 && slot_hours > 0.0) {
        return Err(Error::Domain(format!(
            "charging needs positive rate, efficiency in (0, 1] and slot length \
             (got rate {rate_kw} kW, efficiency {efficiency}, slot {slot_hours} h)"
        )));
    }
    if !(capacity_kwh >= 0.0 && (0.0..=1.0).contains(&soc0)) {
        return Err(Error::Domain(format!(
            "capacity must be non-negative and SOC in [0, 1] (got {capacity_kwh}, {soc0})"
        )));
    }
    Ok(slots_for_energy(
        capacity_kwh * (1.0 - soc0),
        efficiency * rate_kw * slot_hours,
    ))
}

/// `ceil(energy / per_slot)` with a relative guard against rounding noise.
pub(crate) fn slots_for_energy(energy_kwh: f64, per_slot_kwh: f64) -> usize {
    if energy_kwh <= 0.0 {
        return 0;
    }
    let ratio = energy_kwh / per_slot_kwh;
    (ratio - 1e-9 * ratio.max(1.0)).ceil().max(0.0) as usize
}

/// Per-slot residential demand shape and PEV charging price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    /// Dimensionless residential demand shape `l(t)`.
    pub load_fraction: Vec<f64>,
    /// Energy price, $/kWh.
    pub price: Vec<f64>,
}

const BUILTIN_PROFILES: &[(&str, &str)] = &[
    ("profile1", include_str!("../data/profiles/profile1.csv")),
    ("profile2", include_str!("../data/profiles/profile2.csv")),
    ("profile3", include_str!("../data/profiles/profile3.csv")),
    ("profile4", include_str!("../data/profiles/profile4.csv")),
];

#[derive(Debug, Deserialize)]
struct ProfileRow {
    slot: usize,
    load_fraction: f64,
    price: f64,
}

impl Profile {
    /// Parse `slot,load_fraction,price` rows (slots numbered from 1).
    pub fn from_csv_str(name: &str, text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut load_fraction = Vec::new();
        let mut price = Vec::new();
        for (i, row) in reader.deserialize::<ProfileRow>().enumerate() {
            let row = row.map_err(|e| Error::parse(format!("profile {name}"), e))?;
            if row.slot != i + 1 {
                return Err(Error::parse(
                    format!("profile {name}"),
                    format!("row {} has slot {}, expected {}", i + 1, row.slot, i + 1),
                ));
            }
            load_fraction.push(row.load_fraction);
            price.push(row.price);
        }
        let profile = Profile {
            name: name.to_string(),
            load_fraction,
            price,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_csv_str(&name, &text)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (n, text) = BUILTIN_PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no builtin profile named `{name}`")))?;
        Self::from_csv_str(n, text)
    }

    /// Builtin name or CSV path.
    pub fn resolve(spec: &str) -> Result<Self> {
        if BUILTIN_PROFILES.iter().any(|(n, _)| *n == spec) {
            Self::builtin(spec)
        } else {
            Self::load_csv(spec)
        }
    }

    pub fn flat(num_slots: usize, load_fraction: f64, price: f64) -> Self {
        Profile {
            name: "flat".into(),
            load_fraction: vec![load_fraction; num_slots],
            price: vec![price; num_slots],
        }
    }

    pub fn len(&self) -> usize {
        self.load_fraction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_fraction.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.load_fraction.len() != self.price.len() {
            return Err(Error::Validation(format!(
                "profile {}: {} load values but {} prices",
                self.name,
                self.load_fraction.len(),
                self.price.len()
            )));
        }
        if let Some(t) = self.load_fraction.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::Validation(format!(
                "profile {}: load fraction at slot {} must be positive",
                self.name,
                t + 1
            )));
        }
        if let Some(t) = self.price.iter().position(|&p| !(p >= 0.0)) {
            return Err(Error::Validation(format!(
                "profile {}: price at slot {} must be non-negative",
                self.name,
                t + 1
            )));
        }
        Ok(())
    }
}

/// Spread a nominal load over the slots following the profile shape:
/// `P(t) = l(t) · base · T / Σ l`, which keeps `Σ P(t) = T · base`.
pub fn scale_load(base: f64, profile: &Profile, grid: &TimeGrid) -> Result<Vec<f64>> {
    let t = grid.num_slots;
    if profile.len() < t {
        return Err(Error::Domain(format!(
            "profile {} covers {} slots, grid needs {t}",
            profile.name,
            profile.len()
        )));
    }
    let shape = &profile.load_fraction[..t];
    let total: f64 = shape.iter().sum();
    if total == 0.0 {
        return Err(Error::Domain("profile load fractions sum to zero".into()));
    }
    Ok(shape
        .iter()
        .map(|l| l * base * t as f64 / total)
        .collect())
}

/// Per-slot, per-bus active and reactive residential load in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTable {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl LoadTable {
    pub fn build(case: &GridCase, profile: &Profile, grid: &TimeGrid) -> Result<Self> {
        let mut p = vec![vec![0.0; case.num_buses()]; grid.num_slots];
        let mut q = p.clone();
        for (k, bus) in case.buses.iter().enumerate() {
            let ps = scale_load(bus.base_load_p, profile, grid)?;
            let qs = scale_load(bus.base_load_q, profile, grid)?;
            for t in 0..grid.num_slots {
                p[t][k] = ps[t];
                q[t][k] = qs[t];
            }
        }
        Ok(LoadTable { p, q })
    }
}

fn truncated_arrival_hour<R: Rng>(rng: &mut R, normal: &Normal<f64>) -> f64 {
    loop {
        let h = normal.sample(rng);
        if h >= ARRIVAL_WINDOW.0 && h < ARRIVAL_WINDOW.1 {
            return h;
        }
    }
}

/// Arrival wall-clock hours from the truncated normal `N(20, 1.5²)` on `[18, 24)`.
pub fn sample_arrival_hours(count: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(ARRIVAL_MEAN_HOUR, ARRIVAL_SD_HOURS).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| truncated_arrival_hour(&mut rng, &normal))
        .collect()
}

/// Arrival slots for `count` PEVs: sampled hours rounded up to the next slot boundary.
pub fn sample_arrivals(count: usize, seed: u64, grid: &TimeGrid) -> Vec<usize> {
    sample_arrival_hours(count, seed)
        .into_iter()
        .map(|h| grid.slot_at_or_after(h))
        .collect()
}

/// Knobs for the synthetic fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetParams {
    pub pevs_per_station: usize,
    pub seed: u64,
    pub rate_kw: f64,
    pub efficiency: f64,
    pub capacity_kwh: f64,
    pub initial_soc: f64,
    /// Extra window slots beyond the minimum, drawn uniformly from this range.
    pub slack_min: usize,
    pub slack_max: usize,
}

impl Default for FleetParams {
    fn default() -> Self {
        FleetParams {
            pevs_per_station: 42,
            seed: 2017,
            rate_kw: 20.0,
            efficiency: 1.0,
            capacity_kwh: 100.0,
            initial_soc: 0.2,
            slack_min: 2,
            slack_max: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedTask {
    pub station: BusId,
    pub pev_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub tasks: Vec<ChargingTask>,
    pub rejected: Vec<RejectedTask>,
}

/// Generate `pevs_per_station` tasks at every charging station.
///
/// Departure is `min(T - 1, arrival + required + slack)`; a task whose window
/// still cannot hold its required slots is rejected, never clipped.
pub fn build_fleet(case: &GridCase, params: &FleetParams, grid: &TimeGrid) -> Result<Fleet> {
    grid.validate()?;
    if params.slack_min > params.slack_max {
        return Err(Error::Config("slack_min exceeds slack_max".into()));
    }
    let required = required_slots(
        params.capacity_kwh,
        params.initial_soc,
        params.efficiency,
        params.rate_kw,
        grid.slot_hours,
    )?;
    let stations = case.stations();
    let total = params.pevs_per_station * stations.len();
    let arrivals = sample_arrivals(total, params.seed, grid);
    let mut slack_rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_51ac_u64);

    let mut tasks = Vec::with_capacity(total);
    let mut rejected = Vec::new();
    let mut draws = arrivals.into_iter();
    for &station in stations {
        for n in 0..params.pevs_per_station {
            let arrival = draws.next().expect("one arrival per task");
            let slack = slack_rng.random_range(params.slack_min..=params.slack_max);
            let departure = (arrival + required + slack).min(grid.num_slots - 1);
            let window = departure + 1 - arrival;
            if required > window {
                rejected.push(RejectedTask {
                    station,
                    pev_index: n,
                    reason: format!(
                        "arrives at slot {arrival}, needs {required} slots, window holds {window}"
                    ),
                });
                continue;
            }
            tasks.push(ChargingTask {
                id: tasks.len(),
                station,
                pev_index: n,
                arrival,
                departure,
                capacity_kwh: params.capacity_kwh,
                initial_soc: params.initial_soc,
                rate_kw: params.rate_kw,
                efficiency: params.efficiency,
                required_slots: required,
            });
        }
    }
    Ok(Fleet { tasks, rejected })
}

/// Small seeded instance: `num_slots` half-hour slots cut from `profile2` at
/// a random offset, and `num_tasks` PEVs needing one to three slots each at
/// random stations. Demands are drawn so that the last slot is usually only
/// partly needed.
pub fn toy_scenario(case: &GridCase, num_tasks: usize, num_slots: usize, seed: u64) -> Result<Scenario> {
    let base = Profile::builtin("profile2")?;
    if num_slots == 0 || num_slots > base.len() {
        return Err(Error::Config(format!("toy scenarios take 1..={} slots", base.len())));
    }
    if case.stations().is_empty() && num_tasks > 0 {
        return Err(Error::Config(format!("{} has no charging stations", case.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..=base.len() - num_slots);
    let profile = Profile {
        name: format!("profile2[{offset}..{}]", offset + num_slots),
        load_fraction: base.load_fraction[offset..offset + num_slots].to_vec(),
        price: base.price[offset..offset + num_slots].to_vec(),
    };
    let time = TimeGrid::new(num_slots, 0.5)?;
    let (rate_kw, efficiency, soc) = (20.0, 1.0, 0.2);
    let per_slot = efficiency * rate_kw * time.slot_hours;
    let mut tasks = Vec::with_capacity(num_tasks);
    for id in 0..num_tasks {
        let station = case.stations()[rng.random_range(0..case.stations().len())];
        let max_need = num_slots.min(3);
        let need = rng.random_range(1..=max_need);
        let arrival = rng.random_range(0..=num_slots - need);
        let departure = rng.random_range(arrival + need - 1..num_slots);
        let energy = per_slot * (need as f64 - rng.random_range(0.0..0.9));
        let capacity_kwh = energy / (1.0 - soc);
        let required = required_slots(capacity_kwh, soc, efficiency, rate_kw, time.slot_hours)?;
        tasks.push(ChargingTask {
            id,
            station,
            pev_index: id,
            arrival,
            departure,
            capacity_kwh,
            initial_soc: soc,
            rate_kw,
            efficiency,
            required_slots: required,
        });
    }
    Scenario::new(time, profile, tasks, seed)
}

/// Everything a run needs to know about demand: time grid, profile and fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time: TimeGrid,
    pub profile: Profile,
    pub tasks: Vec<ChargingTask>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(time: TimeGrid, profile: Profile, tasks: Vec<ChargingTask>, seed: u64) -> Result<Self> {
        let scenario = Scenario {
            time,
            profile,
            tasks,
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.time.validate()?;
        self.profile.validate()?;
        if self.profile.len() < self.time.num_slots {
            return Err(Error::Validation(format!(
                "profile has {} slots, grid needs {}",
                self.profile.len(),
                self.time.num_slots
            )));
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.id != i {
                return Err(Error::Validation(format!(
                    "task ids must be 0..n in order (position {i} has id {})",
                    task.id
                )));
            }
            task.validate(&self.time)?;
        }
        Ok(())
    }

    /// Total number of binary charging decisions, one per task per window slot.
    pub fn binary_variable_count(&self) -> usize {
        self.tasks.iter().map(|t| t.window_len()).sum()
    }

    pub fn fleet_to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tasks).expect("fleet serialization cannot fail")
    }

    pub fn fleet_from_json(text: &str) -> Result<Vec<ChargingTask>> {
        serde_json::from_str(text).map_err(|e| Error::parse("fleet file", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Relaxed,
    Binary,
}

/// Charging decisions `τ` for a set of tasks over a contiguous slot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSchedule {
    pub task_ids: Vec<usize>,
    pub first_slot: usize,
    pub num_slots: usize,
    /// Row-major `task × slot` values.
    values: Vec<f64>,
    pub mode: ScheduleMode,
}

impl ChargingSchedule {
    pub fn zeros(task_ids: Vec<usize>, first_slot: usize, num_slots: usize, mode: ScheduleMode) -> Self {
        let values = vec![0.0; task_ids.len() * num_slots];
        ChargingSchedule {
            task_ids,
            first_slot,
            num_slots,
            values,
            mode,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn slots(&self) -> std::ops::Range<usize> {
        self.first_slot..self.first_slot + self.num_slots
    }

    pub fn get(&self, row: usize, slot: usize) -> f64 {
        if !self.slots().contains(&slot) {
            return 0.0;
        }
        self.values[row * self.num_slots + slot - self.first_slot]
    }

    pub fn set(&mut self, row: usize, slot: usize, value: f64) {
        assert!(self.slots().contains(&slot), "slot {slot} outside schedule");
        self.values[row * self.num_slots + slot - self.first_slot] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.num_slots..(row + 1) * self.num_slots]
    }

    pub fn row_sum(&self, row: usize) -> f64 {
        self.row(row).iter().sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest distance of any entry from `{0, 1}`.
    pub fn max_binary_violation(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v.abs().min((1.0 - v).abs()))
            .fold(0.0, f64::max)
    }

    /// Check support and, in binary mode, integrality and per-task sums.
    pub fn check(&self, windows: &[(usize, usize)], required: &[usize]) -> Result<()> {
        for row in 0..self.num_tasks() {
            let (lo, hi) = windows[row];
            for slot in self.slots() {
                let v = self.get(row, slot);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "task {} slot {slot}: value {v} outside [0, 1]",
                        self.task_ids[row]
                    )));
                }
                if (slot < lo || slot > hi) && v != 0.0 {
                    return Err(Error::Validation(format!(
                        "task {} charges at slot {slot} outside its window [{lo}, {hi}]",
                        self.task_ids[row]
                    )));
                }
            }
            if self.mode == ScheduleMode::Binary {
                if self.row(row).iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Validation(format!(
                        "task {} has non-binary entries",
                        self.task_ids[row]
                    )));
                }
                let sum = self.row_sum(row).round() as usize;
                if sum != required[row] {
                    return Err(Error::Validation(format!(
                        "task {} charges {sum} slots, needs {}",
                        self.task_ids[row], required[row]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::builtin_case;

    #[test]
    fn required_slots_examples() {
        assert_eq!(required_slots(100.0, 0.2, 1.0, 20.0, 0.5).unwrap(), 8);
        assert_eq!(required_slots(100.0, 1.0, 1.0, 20.0, 0.5).unwrap(), 0);
        assert_eq!(required_slots(100.0, 0.2, 0.9, 20.0, 0.5).unwrap(), 9);
        assert!(matches!(
            required_slots(100.0, 0.2, 1.0, 0.0, 0.5),
            Err(Error::Domain(_))
        ));
        assert!(required_slots(100.0, 0.2, 1.0, -3.0, 0.5).is_err());
    }

    #[test]
    fn required_slots_deliver_enough_energy() {
        for &(c, s, u, p, d) in &[
            (100.0, 0.2, 1.0, 20.0, 0.5),
            (100.0, 0.2, 0.9, 20.0, 0.5),
            (75.0, 0.35, 0.93, 7.4, 0.5),
            (60.0, 0.1, 0.85, 11.0, 1.0),
        ] {
            let n = required_slots(c, s, u, p, d).unwrap();
            assert!(n as f64 * u * p * d >= c * (1.0 - s) - 1e-9);
            assert!((n as f64 - 1.0) * u * p * d < c * (1.0 - s));
        }
    }

    #[test]
    fn scale_load_examples() {
        let grid = TimeGrid::new(2, 0.5).unwrap();
        let profile = Profile {
            name: "x".into(),
            load_fraction: vec![1.0, 3.0],
            price: vec![0.0, 0.0],
        };
        let p = scale_load(10.0, &profile, &grid).unwrap();
        assert_eq!(p, vec![5.0, 15.0]);

        let flat = Profile::flat(24, 0.7, 0.1);
        let p = scale_load(3.5, &flat, &TimeGrid::default()).unwrap();
        assert!(p.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn scale_load_preserves_energy_for_bundled_profiles() {
        let grid = TimeGrid::default();
        for i in 1..=4 {
            let profile = Profile::builtin(&format!("profile{i}")).unwrap();
            let p = scale_load(1.25, &profile, &grid).unwrap();
            let total: f64 = p.iter().sum();
            assert!((total - 24.0 * 1.25).abs() <= 1e-12 * 30.0);
        }
    }

    #[test]
    fn scale_load_rejects_short_profiles() {
        let grid = TimeGrid::default();
        let profile = Profile::flat(10, 1.0, 0.1);
        assert!(scale_load(1.0, &profile, &grid).is_err());
    }

    #[test]
    fn profile_csv_errors() {
        let bad = "slot,load_fraction,price\n1,0.5,0.1\n3,0.5,0.1\n";
        assert!(Profile::from_csv_str("bad", bad).is_err());
        let neg = "slot,load_fraction,price\n1,0.5,-0.1\n";
        assert!(Profile::from_csv_str("neg", neg).is_err());
        let zero = "slot,load_fraction,price\n1,0.0,0.1\n";
        assert!(Profile::from_csv_str("zero", zero).is_err());
    }

    #[test]
    fn arrivals_empty_and_deterministic() {
        let grid = TimeGrid::default();
        assert!(sample_arrivals(0, 1, &grid).is_empty());
        assert_eq!(sample_arrivals(50, 9, &grid), sample_arrivals(50, 9, &grid));
        assert_ne!(sample_arrivals(50, 9, &grid), sample_arrivals(50, 10, &grid));
    }

    #[test]
    fn arrival_slots_round_up() {
        let grid = TimeGrid::default();
        assert_eq!(grid.slot_at_or_after(18.0), 0);
        assert_eq!(grid.slot_at_or_after(18.1), 1);
        assert_eq!(grid.slot_at_or_after(20.0), 4);
        assert_eq!(grid.slot_at_or_after(23.9), 12);
        assert_eq!(grid.slot_label(0), "18:00");
        assert_eq!(grid.slot_label(13), "00:30");
        assert_eq!(grid.slot_label(23), "05:30");
    }

    #[test]
    fn fleet_sizes_follow_station_count() {
        let grid = TimeGrid::default();
        let case9 = builtin_case("case9").unwrap();
        let fleet = build_fleet(&case9, &FleetParams::default(), &grid).unwrap();
        assert_eq!(fleet.tasks.len(), 126);
        assert!(fleet.rejected.is_empty());
        let empty = build_fleet(
            &case9,
            &FleetParams {
                pevs_per_station: 0,
                ..FleetParams::default()
            },
            &grid,
        )
        .unwrap();
        assert!(empty.tasks.is_empty());
    }

    #[test]
    fn infeasible_windows_are_rejected() {
        let grid = TimeGrid::default();
        let case = builtin_case("case3").unwrap();
        // 5 kW for 80 kWh needs 32 half-hour slots: never fits in 24.
        let params = FleetParams {
            pevs_per_station: 3,
            rate_kw: 5.0,
            ..FleetParams::default()
        };
        let fleet = build_fleet(&case, &params, &grid).unwrap();
        assert!(fleet.tasks.is_empty());
        assert_eq!(fleet.rejected.len(), 3);
        assert!(fleet.rejected[0].reason.contains("needs 32"));
    }

    #[test]
    fn schedule_check_catches_errors() {
        let mut s = ChargingSchedule::zeros(vec![0], 2, 4, ScheduleMode::Binary);
        s.set(0, 3, 1.0);
        s.set(0, 4, 1.0);
        assert!(s.check(&[(2, 5)], &[2]).is_ok());
        assert!(s.check(&[(2, 5)], &[3]).is_err());
        assert!(s.check(&[(4, 5)], &[2]).is_err());
        s.set(0, 5, 0.5);
        assert!(s.check(&[(2, 5)], &[2]).is_err());
        assert!((s.max_binary_violation() - 0.5).abs() < 1e-15);
        assert_eq!(s.get(0, 99), 0.0);
    }
}
