//! Residential grid model: buses, series-admittance lines, distributed
//! generators and the JSON case format they are loaded from.
//!
//! All electrical quantities are per-unit on `base_mva`; generator cost
//! coefficients stay in MATPOWER units ($/MW²h, $/MWh, $/h). Every generator
//! bus doubles as a charging station.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Default per-line phase-angle limit when a case does not list one.
pub const DEFAULT_ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub v_min: f64,
    pub v_max: f64,
    pub base_load_p: f64,
    pub base_load_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Admittance {
    pub re: f64,
    pub im: f64,
}

impl From<Admittance> for Complex64 {
    fn from(a: Admittance) -> Self {
        Complex64::new(a.re, a.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub admittance: Admittance,
}

impl Line {
    pub fn y(&self) -> Complex64 {
        self.admittance.into()
    }
}

/// Quadratic generation cost `c2·P² + c1·P + c0` with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostCurve {
    pub fn eval_mw(&self, p_mw: f64) -> f64 {
        self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: CostCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleLimit {
    pub from: BusId,
    pub to: BusId,
    pub max_rad: f64,
}

/// On-disk layout of a case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default)]
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    angle_limits: Vec<AngleLimit>,
}

/// A validated grid. Immutable once built.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub angle_limits: Vec<AngleLimit>,
    bus_pos: HashMap<BusId, usize>,
    stations: Vec<BusId>,
    line_theta: Vec<f64>,
    adjacency: Vec<Vec<(usize, Complex64)>>,
}

impl PartialEq for GridCase {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.lines == other.lines
            && self.generators == other.generators
            && self.angle_limits == other.angle_limits
    }
}

const BUILTIN_CASES: &[(&str, &str)] = &[
    ("case3", include_str!("../data/cases/case3.json")),
    ("case9", include_str!("../data/cases/case9.json")),
    ("case14", include_str!("../data/cases/case14.json")),
    ("case30", include_str!("../data/cases/case30.json")),
    ("case57", include_str!("../data/cases/case57.json")),
];

/// Names of the cases compiled into the crate.
pub fn builtin_case_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_CASES.iter().map(|(n, _)| *n)
}

/// Load a bundled case by name (`case3`, `case9`, `case14`, `case30`, `case57`).
pub fn builtin_case(name: &str) -> Result<GridCase> {
    let (_, text) = BUILTIN_CASES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no builtin case named `{name}`")))?;
    GridCase::from_json(text)
}

/// Load and validate a JSON case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GridCase::from_json(&text)
}

/// Resolve either a builtin case name or a path on disk.
pub fn resolve_case(spec: &str) -> Result<GridCase> {
    if BUILTIN_CASES.iter().any(|(n, _)| *n == spec) {
        builtin_case(spec)
    } else {
        load_case(spec)
    }
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile =
            serde_json::from_str(text).map_err(|e| Error::parse("case file", e))?;
        Self::from_parts(
            file.name,
            file.base_mva,
            file.buses,
            file.lines,
            file.generators,
            file.angle_limits,
        )
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            angle_limits: self.angle_limits.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serialization cannot fail")
    }

    pub fn from_parts(
        name: String,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        angle_limits: Vec<AngleLimit>,
    ) -> Result<Self> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(Error::Validation(format!(
                "base_mva must be positive, got {base_mva}"
            )));
        }
        if buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        let mut bus_pos = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if b.id.0 == 0 {
                return Err(Error::Validation("bus ids start at 1".into()));
            }
            if bus_pos.insert(b.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus {}", b.id)));
            }
            if !(b.v_min > 0.0 && b.v_min <= b.v_max && b.v_max.is_finite()) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage bounds must satisfy 0 < v_min <= v_max (got {}, {})",
                    b.id, b.v_min, b.v_max
                )));
            }
            if !(b.base_load_p.is_finite() && b.base_load_q.is_finite()) {
                return Err(Error::Validation(format!("bus {}: non-finite load", b.id)));
            }
        }

        let mut adjacency = vec![Vec::new(); buses.len()];
        for (l, line) in lines.iter().enumerate() {
            let k = *bus_pos.get(&line.from).ok_or_else(|| {
                Error::Validation(format!("line {l} references undeclared bus {}", line.from))
            })?;
            let m = *bus_pos.get(&line.to).ok_or_else(|| {
                Error::Validation(format!("line {l} references undeclared bus {}", line.to))
            })?;
            if k == m {
                return Err(Error::Validation(format!(
                    "line {l} is a self-loop on bus {}",
                    line.from
                )));
            }
            let y = line.y();
            if !(y.re.is_finite() && y.im.is_finite()) || y.norm() == 0.0 {
                return Err(Error::Validation(format!(
                    "line {l} ({}-{}) needs a finite nonzero admittance",
                    line.from, line.to
                )));
            }
            adjacency[k].push((m, y));
            adjacency[m].push((k, y));
        }

        let mut stations = Vec::new();
        for (g, gen) in generators.iter().enumerate() {
            if !bus_pos.contains_key(&gen.bus) {
                return Err(Error::Validation(format!(
                    "generator {g} sits on undeclared bus {}",
                    gen.bus
                )));
            }
            if gen.p_min > gen.p_max || gen.q_min > gen.q_max {
                return Err(Error::Validation(format!(
                    "generator {g} on bus {}: bounds out of order",
                    gen.bus
                )));
            }
            if gen.cost.c2 < 0.0 {
                return Err(Error::Validation(format!(
                    "generator {g} on bus {}: cost must be convex (c2 >= 0)",
                    gen.bus
                )));
            }
            if !stations.contains(&gen.bus) {
                stations.push(gen.bus);
            }
        }

        let mut line_theta = vec![DEFAULT_ANGLE_LIMIT; lines.len()];
        for lim in &angle_limits {
            if !(lim.max_rad > 0.0 && lim.max_rad < FRAC_PI_2) {
                return Err(Error::Validation(format!(
                    "angle limit on {}-{} must lie in (0, pi/2)",
                    lim.from, lim.to
                )));
            }
            let mut found = false;
            for (l, line) in lines.iter().enumerate() {
                if (line.from == lim.from && line.to == lim.to)
                    || (line.from == lim.to && line.to == lim.from)
                {
                    line_theta[l] = lim.max_rad;
                    found = true;
                }
            }
            if !found {
                return Err(Error::Validation(format!(
                    "angle limit given for non-existent line {}-{}",
                    lim.from, lim.to
                )));
            }
        }

        Ok(GridCase {
            name,
            base_mva,
            buses,
            lines,
            generators,
            angle_limits,
            bus_pos,
            stations,
            line_theta,
            adjacency,
        })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus in `buses`.
    pub fn bus_index(&self, id: BusId) -> Result<usize> {
        self.bus_pos.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    /// Charging stations: the distinct generator buses, in order of appearance.
    pub fn stations(&self) -> &[BusId] {
        &self.stations
    }

    pub fn is_station(&self, id: BusId) -> bool {
        self.stations.contains(&id)
    }

    /// Phase-angle limit of line `l` (explicit or the default).
    pub fn line_angle_limit(&self, l: usize) -> f64 {
        self.line_theta[l]
    }

    /// Neighbours of bus `k` with the admittance of each connecting line.
    /// Parallel lines appear once per line.
    pub fn admittance_neighbors(&self, k: BusId) -> Result<Vec<(BusId, Complex64)>> {
        let pos = self.bus_index(k)?;
        Ok(self.adjacency[pos]
            .iter()
            .map(|&(m, y)| (self.buses[m].id, y))
            .collect())
    }

    /// Same as [`admittance_neighbors`](Self::admittance_neighbors) but by position.
    pub fn neighbors_by_index(&self, k: usize) -> &[(usize, Complex64)] {
        &self.adjacency[k]
    }

    /// Generators attached to bus position `k`.
    pub fn generators_at(&self, k: usize) -> impl Iterator<Item = (usize, &Generator)> {
        let id = self.buses[k].id;
        self.generators
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.bus == id)
    }

    /// Convert a power in kW to per-unit on this case's base.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / 1000.0 / self.base_mva
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case9_counts() {
        let case = builtin_case("case9").unwrap();
        assert_eq!(case.num_buses(), 9);
        assert_eq!(case.generators.len(), 3);
        assert_eq!(case.lines.len(), 9);
        assert_eq!(case.stations().len(), 3);
    }

    #[test]
    fn case3_fixture() {
        let case = builtin_case("case3").unwrap();
        assert_eq!(case.num_buses(), 3);
        assert_eq!(case.stations(), &[BusId(1)]);
        let nb = case.admittance_neighbors(BusId(1)).unwrap();
        assert_eq!(nb.len(), 2);
        assert_eq!(nb[0].0, BusId(2));
        assert_eq!(nb[0].1, Complex64::new(10.0, -20.0));
        assert_eq!(nb[1].0, BusId(3));
        assert_eq!(nb[1].1, case.lines[1].y());
    }

    #[test]
    fn undeclared_bus_is_rejected() {
        let mut text = builtin_case("case3").unwrap().to_json();
        text = text.replacen("\"to\": 3", "\"to\": 99", 1);
        let err = GridCase::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("99")), "{err}");
    }

    #[test]
    fn missing_field_names_the_field() {
        let text = r#"{"base_mva": 1.0, "buses": [{"id": 1, "v_max": 1.1,
            "base_load_p": 0, "base_load_q": 0}], "lines": [], "generators": []}"#;
        let err = GridCase::from_json(text).unwrap_err();
        assert!(err.to_string().contains("v_min"), "{err}");
    }

    #[test]
    fn bad_voltage_bounds_name_the_bus() {
        let text = r#"{"base_mva": 1.0, "buses": [{"id": 7, "v_min": 1.2, "v_max": 1.1,
            "base_load_p": 0, "base_load_q": 0}], "lines": [], "generators": []}"#;
        let err = GridCase::from_json(text).unwrap_err();
        assert!(err.to_string().contains("bus 7"), "{err}");
    }

    #[test]
    fn isolated_bus_has_no_neighbors() {
        let text = r#"{"base_mva": 1.0, "buses": [{"id": 1, "v_min": 0.9, "v_max": 1.1,
            "base_load_p": 0, "base_load_q": 0}], "lines": [], "generators": []}"#;
        let case = GridCase::from_json(text).unwrap();
        assert!(case.admittance_neighbors(BusId(1)).unwrap().is_empty());
        assert!(matches!(
            case.admittance_neighbors(BusId(2)),
            Err(Error::UnknownBus(BusId(2)))
        ));
    }

    #[test]
    fn neighbor_lists_match_degree_in_case9() {
        let case = builtin_case("case9").unwrap();
        for bus in &case.buses {
            let degree = case
                .lines
                .iter()
                .filter(|l| l.from == bus.id || l.to == bus.id)
                .count();
            assert_eq!(case.admittance_neighbors(bus.id).unwrap().len(), degree);
        }
    }

    #[test]
    fn neighborhoods_are_symmetric() {
        for name in builtin_case_names() {
            let case = builtin_case(name).unwrap();
            for bus in &case.buses {
                for (m, y) in case.admittance_neighbors(bus.id).unwrap() {
                    let back = case.admittance_neighbors(m).unwrap();
                    assert!(back.iter().any(|&(k, y2)| k == bus.id && y2 == y));
                }
            }
        }
    }

    #[test]
    fn bundled_voltage_bounds_are_sane() {
        for name in builtin_case_names() {
            let case = builtin_case(name).unwrap();
            for b in &case.buses {
                assert!(b.v_min >= 0.5 && b.v_max <= 1.5, "{name} bus {}", b.id);
            }
        }
    }

    #[test]
    fn default_angle_limit_applies() {
        let case = builtin_case("case9").unwrap();
        assert!((case.line_angle_limit(0) - DEFAULT_ANGLE_LIMIT).abs() < 1e-15);
    }

    #[test]
    fn explicit_angle_limit_overrides_default() {
        let mut text = builtin_case("case3").unwrap().to_json();
        text.pop();
        text.push_str(r#", "angle_limits": [{"from": 3, "to": 1, "max_rad": 0.3}]}"#);
        let case = GridCase::from_json(&text).unwrap();
        assert_eq!(case.line_angle_limit(0), DEFAULT_ANGLE_LIMIT);
        assert_eq!(case.line_angle_limit(1), 0.3);
    }
}
