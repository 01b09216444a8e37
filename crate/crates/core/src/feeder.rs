//! Radial feeder topology and the LinDistFlow voltage model `v = R p + X q + 1`.
//!
//! Bus ids are the integers used in the line table. The slack bus is the root
//! of the tree and is not part of the state vectors; every other bus gets a
//! state index in ascending order of its id.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IEEE33_LINES: &str = include_str!("../data/ieee33_lines.txt");
const IEEE33_LOADS: &str = include_str!("../data/ieee33_loads.txt");

/// Slack bus id of the bundled 33-bus feeder.
pub const IEEE33_SLACK: usize = 1;

/// Smallest eigenvalue accepted as positive when checking definiteness.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Power and voltage bases used to convert ohms to per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseUnits {
    pub power_mva: f64,
    pub voltage_kv: f64,
}

impl Default for BaseUnits {
    fn default() -> Self {
        Self {
            power_mva: 10.0,
            voltage_kv: 12.66,
        }
    }
}

impl BaseUnits {
    pub fn impedance_ohm(&self) -> f64 {
        self.voltage_kv * self.voltage_kv / self.power_mva
    }

    /// `z_pu = z_ohm * S_base / V_base^2`
    pub fn ohm_to_pu(&self, z_ohm: f64) -> f64 {
        z_ohm * self.power_mva / (self.voltage_kv * self.voltage_kv)
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.power_mva * 1e3)
    }
}

/// A branch between two buses with per-unit series impedance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Self { from, to, r, x }
    }
}

#[derive(Debug, Clone)]
pub struct FeederModel {
    slack: usize,
    buses: Vec<usize>,
    index: HashMap<usize, usize>,
    lines: Vec<Line>,
    r: DMatrix<f64>,
    x: DMatrix<f64>,
    base: BaseUnits,
}

/// Builds the sensitivity matrices of a radial feeder.
///
/// `R[i][j]` is twice the sum of line resistances on the part of the path from
/// the slack bus that buses `i` and `j` share; `X` is the same with
/// reactances. Lines are directed `from -> to`, away from the slack bus.
pub fn build_feeder(lines: &[Line], slack: usize) -> Result<FeederModel> {
    for line in lines {
        if !(line.r.is_finite() && line.r > 0.0 && line.x.is_finite() && line.x > 0.0) {
            return Err(Error::Validation(format!(
                "line {}-{} has non-positive impedance (r = {}, x = {})",
                line.from, line.to, line.r, line.x
            )));
        }
        if line.from == line.to {
            return Err(Error::Topology(format!("line {}-{} is a self loop", line.from, line.to)));
        }
    }

    let mut parent_line: HashMap<usize, usize> = HashMap::new();
    let mut all: BTreeSet<usize> = BTreeSet::new();
    for (k, line) in lines.iter().enumerate() {
        all.insert(line.from);
        all.insert(line.to);
        if line.to == slack {
            return Err(Error::Topology(format!(
                "line {}-{} feeds into the slack bus {slack}",
                line.from, line.to
            )));
        }
        if parent_line.insert(line.to, k).is_some() {
            return Err(Error::Topology(format!("bus {} is fed by more than one line", line.to)));
        }
    }
    if !all.contains(&slack) {
        return Err(Error::Topology(format!("slack bus {slack} is not connected to any line")));
    }

    let buses: Vec<usize> = all.into_iter().filter(|&b| b != slack).collect();
    let n = buses.len();
    let index: HashMap<usize, usize> = buses.iter().enumerate().map(|(i, &b)| (b, i)).collect();

    // lines on the path slack -> bus, as a membership mask per bus
    let mut on_path = vec![vec![false; lines.len()]; n];
    for (i, &bus) in buses.iter().enumerate() {
        let mut cur = bus;
        let mut hops = 0;
        while cur != slack {
            let Some(&k) = parent_line.get(&cur) else {
                return Err(Error::Topology(format!("bus {bus} is not reachable from the slack bus")));
            };
            on_path[i][k] = true;
            cur = lines[k].from;
            hops += 1;
            if hops > lines.len() {
                return Err(Error::Topology(format!("cycle detected on the path of bus {bus}")));
            }
        }
    }
    if lines.len() != n {
        return Err(Error::Topology(format!(
            "{} lines for {n} non-slack buses; a radial feeder needs exactly one per bus",
            lines.len()
        )));
    }

    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (mut rs, mut xs) = (0.0, 0.0);
            for (k, line) in lines.iter().enumerate() {
                if on_path[i][k] && on_path[j][k] {
                    rs += line.r;
                    xs += line.x;
                }
            }
            r[(i, j)] = 2.0 * rs;
            r[(j, i)] = 2.0 * rs;
            x[(i, j)] = 2.0 * xs;
            x[(j, i)] = 2.0 * xs;
        }
    }

    Ok(FeederModel {
        slack,
        buses,
        index,
        lines: lines.to_vec(),
        r,
        x,
        base: BaseUnits::default(),
    })
}

impl FeederModel {
    /// The bundled IEEE 33-bus feeder with the default bases.
    pub fn ieee33() -> Self {
        let lines = parse_line_table(IEEE33_LINES, Path::new("<ieee33>"), BaseUnits::default())
            .expect("bundled line table parses");
        build_feeder(&lines, IEEE33_SLACK).expect("bundled line table is radial")
    }

    pub fn with_base(mut self, base: BaseUnits) -> Self {
        self.base = base;
        self
    }

    /// Number of non-slack buses.
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Non-slack bus ids in state order.
    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn base(&self) -> BaseUnits {
        self.base
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// State index of a bus id; `None` for the slack bus or unknown ids.
    pub fn index_of(&self, bus: usize) -> Option<usize> {
        self.index.get(&bus).copied()
    }

    pub fn bus_at(&self, index: usize) -> usize {
        self.buses[index]
    }

    /// `v = R p + X q + 1`
    pub fn solve_voltage(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("solve_voltage (p)", self.n(), p.len())?;
        Error::check_len("solve_voltage (q)", self.n(), q.len())?;
        let mut v = vec![0.0; self.n()];
        self.voltage_into(p, q, &mut v);
        Ok(v)
    }

    /// Allocation-free form of [`solve_voltage`](Self::solve_voltage).
    ///
    /// Panics if any slice does not have length `n`.
    pub fn voltage_into(&self, p: &[f64], q: &[f64], v: &mut [f64]) {
        let n = self.n();
        assert!(p.len() == n && q.len() == n && v.len() == n);
        for (i, vi) in v.iter_mut().enumerate() {
            let mut acc = 1.0;
            // column-major storage: walk row i via the symmetric column i
            let rc = self.r.column(i);
            let xc = self.x.column(i);
            for j in 0..n {
                acc += rc[j] * p[j] + xc[j] * q[j];
            }
            *vi = acc;
        }
    }

    /// Eigenvalues (ascending) of `R` and `X`.
    pub fn sensitivity_spectra(&self) -> (DVector<f64>, DVector<f64>) {
        let mut er = SymmetricEigen::new(self.r.clone()).eigenvalues;
        let mut ex = SymmetricEigen::new(self.x.clone()).eigenvalues;
        er.as_mut_slice().sort_by(f64::total_cmp);
        ex.as_mut_slice().sort_by(f64::total_cmp);
        (er, ex)
    }

    pub fn is_positive_definite(&self) -> bool {
        let (er, ex) = self.sensitivity_spectra();
        er.min() > PD_TOLERANCE && ex.min() > PD_TOLERANCE
    }

    /// Nominal 33-bus active loads as negative injections, scaled by `scale`.
    ///
    /// Buses that do not appear in the nominal load table get zero.
    pub fn ieee33_background(&self, scale: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.n()];
        for (bus, kw) in ieee33_nominal_loads() {
            if let Some(i) = self.index_of(bus) {
                p[i] = -self.base.kw_to_pu(kw) * scale;
            }
        }
        p
    }
}

/// Nominal active load per bus (kW) of the 33-bus test feeder.
pub fn ieee33_nominal_loads() -> Vec<(usize, f64)> {
    IEEE33_LOADS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut cols = l.split_whitespace();
            let bus = cols.next().and_then(|s| s.parse().ok()).expect("bundled load table");
            let kw = cols.next().and_then(|s| s.parse().ok()).expect("bundled load table");
            (bus, kw)
        })
        .collect()
}

/// Parses a `from to r_ohm x_ohm` table into per-unit lines.
///
/// `path` is only used in error messages.
pub fn parse_line_table(text: &str, path: &Path, base: BaseUnits) -> Result<Vec<Line>> {
    let mut lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = row.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 columns `from to r_ohm x_ohm`, found {}", cols.len()),
            ));
        }
        let bus = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid bus id `{s}`")))
        };
        let ohm = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid impedance `{s}`")))
        };
        lines.push(Line::new(
            bus(cols[0])?,
            bus(cols[1])?,
            base.ohm_to_pu(ohm(cols[2])?),
            base.ohm_to_pu(ohm(cols[3])?),
        ));
    }
    if lines.is_empty() {
        return Err(Error::parse(path, 0, "line table has no rows"));
    }
    Ok(lines)
}

/// Loads a line table from disk. The slack bus is the smallest bus id.
pub fn load_line_table(path: &Path, base: BaseUnits) -> Result<FeederModel> {
    let text = fs::read_to_string(path)?;
    let lines = parse_line_table(&text, path, base)?;
    let slack = lines
        .iter()
        .flat_map(|l| [l.from, l.to])
        .min()
        .expect("non-empty table");
    Ok(build_feeder(&lines, slack)?.with_base(base))
}

/// Loads a 33-bus line table with the default 10 MVA / 12.66 kV bases.
pub fn load_ieee33(path: &Path) -> Result<FeederModel> {
    let model = load_line_table(path, BaseUnits::default())?;
    if model.n() != 32 {
        return Err(Error::Topology(format!(
            "33-bus table should have 32 non-slack buses, found {}",
            model.n()
        )));
    }
    Ok(model)
}
