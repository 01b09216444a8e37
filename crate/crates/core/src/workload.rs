//! Data-center active-power traces and the internal battery smoother.
//!
//! Traces are stored in injection space (loads are negative). The storage
//! smoother works on consumption magnitude, `p_net = p - z` with `z > 0`
//! meaning the battery discharges; [`WorkloadTrace`] users convert at the
//! data-center bus.

use std::collections::VecDeque;
use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// `m = 0`
    Communication,
    /// `m = 1`
    Computation,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::Communication => 0,
            Mode::Computation => 1,
        }
    }
}

/// Two-level load model `p = p̄(m) + w`, `|w| <= w̄(m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeProfile {
    /// Mean injection in communication mode (p.u.).
    pub p_comm: f64,
    /// Mean injection in computation mode (p.u.).
    pub p_comp: f64,
    pub w_comm: f64,
    pub w_comp: f64,
    pub period_comm_s: f64,
    pub period_comp_s: f64,
    pub noise_seed: u64,
}

impl TwoModeProfile {
    pub fn mean(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Communication => self.p_comm,
            Mode::Computation => self.p_comp,
        }
    }

    pub fn bound(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Communication => self.w_comm,
            Mode::Computation => self.w_comp,
        }
    }

    /// Collects every violated invariant.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all = [self.p_comm, self.p_comp, self.w_comm, self.w_comp];
        if all.iter().any(|v| !v.is_finite()) {
            out.push("profile levels and bounds must be finite".to_string());
            return out;
        }
        if self.p_comp.abs() < self.p_comm.abs() {
            out.push(format!(
                "computation level |{}| must be at least the communication level |{}|",
                self.p_comp, self.p_comm
            ));
        }
        let half_sep = (self.p_comm - self.p_comp).abs() / 2.0;
        for (name, w) in [("w_comm", self.w_comm), ("w_comp", self.w_comp)] {
            if w < 0.0 || w >= half_sep {
                out.push(format!(
                    "{name} = {w} must lie in [0, {half_sep}) (half the level separation)"
                ));
            }
        }
        for (name, t) in [("period_comm_s", self.period_comm_s), ("period_comp_s", self.period_comp_s)] {
            if !(t.is_finite() && t > 0.0) {
                out.push(format!("{name} must be positive, got {t}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }
}

/// Per-bus active injections over time.
///
/// Every bus except `dc_bus` holds its background injection; the data-center
/// bus carries `background[dc_bus] + dc[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadTrace {
    dt: f64,
    dc_bus: usize,
    background: Vec<f64>,
    dc: Vec<f64>,
    modes: Option<Vec<Mode>>,
}

impl WorkloadTrace {
    pub fn new(
        dt: f64,
        dc_bus: usize,
        background: Vec<f64>,
        dc: Vec<f64>,
        modes: Option<Vec<Mode>>,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Validation(format!("sample interval must be positive, got {dt}")));
        }
        if dc_bus >= background.len() {
            return Err(Error::Validation(format!(
                "data-center bus index {dc_bus} out of range for {} buses",
                background.len()
            )));
        }
        if let Some(m) = &modes {
            Error::check_len("trace modes", dc.len(), m.len())?;
        }
        Ok(Self {
            dt,
            dc_bus,
            background,
            dc,
            modes,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.dc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dc.is_empty()
    }

    pub fn n(&self) -> usize {
        self.background.len()
    }

    pub fn dc_bus(&self) -> usize {
        self.dc_bus
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    /// Data-center injection without the background term.
    pub fn dc_injection(&self) -> &[f64] {
        &self.dc
    }

    pub fn modes(&self) -> Option<&[Mode]> {
        self.modes.as_deref()
    }

    /// Full injection vector at step `t`.
    pub fn injection_at(&self, t: usize) -> Vec<f64> {
        let mut p = self.background.clone();
        p[self.dc_bus] += self.dc[t];
        p
    }

    /// Checks `|p - p̄(m)| <= w̄(m)` at the data-center bus for every step.
    pub fn satisfies_mode_bounds(&self, profile: &TwoModeProfile) -> bool {
        let Some(modes) = &self.modes else {
            return false;
        };
        self.dc
            .iter()
            .zip(modes)
            .all(|(&p, &m)| (p - profile.mean(m)).abs() <= profile.bound(m))
    }
}

/// Square-wave alternation between the two levels, starting in computation
/// mode, with uniform noise on `[-w̄(m), w̄(m)]`.
pub fn generate_trace(
    profile: &TwoModeProfile,
    duration_s: f64,
    dt: f64,
    dc_bus: usize,
    background: &[f64],
) -> Result<WorkloadTrace> {
    profile.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(Error::Validation(format!(
            "duration ({duration_s}) and dt ({dt}) must be positive"
        )));
    }
    let steps = (duration_s / dt).round() as usize;
    let comp_steps = ((profile.period_comp_s / dt).round() as usize).max(1);
    let comm_steps = ((profile.period_comm_s / dt).round() as usize).max(1);
    let cycle = comp_steps + comm_steps;

    let mut rng = ChaCha8Rng::seed_from_u64(profile.noise_seed);
    let mut dc = Vec::with_capacity(steps);
    let mut modes = Vec::with_capacity(steps);
    for t in 0..steps {
        let mode = if t % cycle < comp_steps {
            Mode::Computation
        } else {
            Mode::Communication
        };
        let w_bar = profile.bound(mode);
        let w = if w_bar > 0.0 { rng.gen_range(-w_bar..=w_bar) } else { 0.0 };
        dc.push(profile.mean(mode) + w);
        modes.push(mode);
    }
    WorkloadTrace::new(dt, dc_bus, background.to_vec(), dc, Some(modes))
}

/// A uniformly sampled power series read from disk, in watts of consumption.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeries {
    pub dt: f64,
    pub watts: Vec<f64>,
}

/// Reads a `time_s,power_watts` CSV and resamples it to `dt` by zero-order
/// hold, starting at the first timestamp.
pub fn read_power_csv(path: &Path, dt: f64) -> Result<PowerSeries> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Validation(format!("sample interval must be positive, got {dt}")));
    }
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() < 2 || &header[0] != "time_s" || &header[1] != "power_watts" {
        return Err(Error::parse(path, 1, "expected header `time_s,power_watts`"));
    }

    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            let s = record.get(i).ok_or_else(|| Error::parse(path, line, "missing column"))?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line, format!("invalid number `{s}`")))
        };
        let (t, w) = (field(0)?, field(1)?);
        if let Some(&(prev, _)) = rows.last() {
            if t <= prev {
                return Err(Error::parse(
                    path,
                    line,
                    format!("timestamp {t} does not increase (previous {prev})"),
                ));
            }
        }
        rows.push((t, w));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "trace has no samples"));
    }

    let t0 = rows[0].0;
    let span = rows.last().unwrap().0 - t0;
    let tol = 1e-9 * dt;
    let count = ((span + tol) / dt).floor() as usize + 1;
    let mut watts = Vec::with_capacity(count);
    let mut cursor = 0;
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        while cursor + 1 < rows.len() && rows[cursor + 1].0 <= t + tol {
            cursor += 1;
        }
        watts.push(rows[cursor].1);
    }
    Ok(PowerSeries { dt, watts })
}

/// Loads a measured trace for the data center at state index `dc_bus`.
///
/// `scale` converts watts to p.u.; consumption becomes negative injection.
/// No mode annotation is attached.
pub fn load_trace_csv(
    path: &Path,
    dt: f64,
    dc_bus: usize,
    scale: f64,
    background: &[f64],
) -> Result<WorkloadTrace> {
    let series = read_power_csv(path, dt)?;
    let dc = series.watts.iter().map(|w| -w * scale).collect();
    WorkloadTrace::new(dt, dc_bus, background.to_vec(), dc, None)
}

/// Battery inside the data center that offsets load deviations from a
/// rolling average, `z = k_p (p - mean_T(p))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSmoother {
    pub k_p: f64,
    pub horizon_s: f64,
    /// p.u.·s
    pub energy_capacity: f64,
    pub soc: f64,
    pub soc_band: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispatch {
    pub z: f64,
    pub p_net: f64,
}

impl StorageSmoother {
    pub const DEFAULT_SOC: f64 = 0.95;
    pub const DEFAULT_BAND: (f64, f64) = (0.93, 0.97);

    pub fn new(k_p: f64, horizon_s: f64, energy_capacity: f64, soc: f64, soc_band: (f64, f64)) -> Result<Self> {
        let ok = k_p.is_finite()
            && k_p >= 0.0
            && horizon_s.is_finite()
            && horizon_s > 0.0
            && energy_capacity.is_finite()
            && energy_capacity > 0.0
            && (0.0..=1.0).contains(&soc)
            && 0.0 <= soc_band.0
            && soc_band.0 <= soc_band.1
            && soc_band.1 <= 1.0;
        if !ok {
            return Err(Error::Validation(format!(
                "invalid storage parameters: k_p={k_p}, T={horizon_s}, E={energy_capacity}, soc={soc}, band={soc_band:?}"
            )));
        }
        Ok(Self {
            k_p,
            horizon_s,
            energy_capacity,
            soc,
            soc_band,
        })
    }

    /// Capacity that supplies `max_power` for `backup_s` seconds.
    pub fn capacity_for(max_power: f64, backup_s: f64) -> f64 {
        max_power.abs() * backup_s
    }

    fn admissible(&self, soc: f64) -> bool {
        soc >= self.soc_band.0 && soc <= self.soc_band.1 && (0.0..=1.0).contains(&soc)
    }

    /// Dispatch given the rolling mean directly.
    pub fn dispatch(&mut self, p_now: f64, rolling_mean: f64, dt: f64) -> Dispatch {
        let mut z = self.k_p * (p_now - rolling_mean);
        let next = self.soc - z * dt / self.energy_capacity;
        if !self.admissible(self.soc) || !self.admissible(next) {
            z = 0.0;
        } else {
            self.soc = next;
        }
        Dispatch { z, p_net: p_now - z }
    }

    /// `history` holds the recent consumption samples (including `p_now`)
    /// covering at most the averaging horizon. An empty history averages to
    /// `p_now`.
    pub fn smooth_step(&mut self, p_now: f64, history: &[f64], dt: f64) -> Dispatch {
        let mean = if history.is_empty() {
            p_now
        } else {
            history.iter().sum::<f64>() / history.len() as f64
        };
        self.dispatch(p_now, mean, dt)
    }
}

/// Fixed-length moving average over the most recent samples.
#[derive(Debug, Clone)]
pub struct RollingMean {
    capacity: usize,
    buf: VecDeque<f64>,
    sum: f64,
}

impl RollingMean {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buf: VecDeque::with_capacity(capacity.max(1)),
            sum: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.buf.len() == self.capacity {
            self.sum -= self.buf.pop_front().unwrap();
        }
        self.buf.push_back(x);
        self.sum += x;
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.buf.is_empty()).then(|| self.sum / self.buf.len() as f64)
    }

    pub fn samples(&self) -> impl Iterator<Item = &f64> {
        self.buf.iter()
    }
}
