//! TOML scenario files.
//!
//! Units are spelled out in key names (`_s` seconds, `_pu` per unit). Any key
//! can be overridden with a dotted path, e.g. `control.eta_bias=0.01` or
//! `data_center.0.bus=25`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{AdaptationParams, ControlLimits, DroopGain, ReferencePolicy, SwitchingRefState};
use crate::error::{Error, Result};
use crate::feeder::{load_line_table, BaseUnits, FeederModel, IEEE33_SLACK};
use crate::sim::{DataCenterLoad, Injections, Scenario, SmoothingPlan};
use crate::workload::{generate_trace, read_power_csv, StorageSmoother, TwoModeProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fixed,
    Switching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    /// Base seed; data center `k` without its own seed uses `seed + k`.
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_dt_sim")]
    pub dt_sim_s: f64,
    #[serde(default = "default_dt_ctrl")]
    pub dt_ctrl_s: f64,
    #[serde(default)]
    pub burn_in_s: f64,
    #[serde(default)]
    pub feeder: FeederConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub data_center: Vec<DataCenterConfig>,
    #[serde(default)]
    pub smoothing: Option<SmoothingConfig>,
}

fn default_controller() -> ControllerKind {
    ControllerKind::Switching
}
fn default_dt_sim() -> f64 {
    0.1
}
fn default_dt_ctrl() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederConfig {
    /// `ieee33` or a path to a `from to r_ohm x_ohm` table.
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_background_scale")]
    pub background_scale: f64,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_base_kv")]
    pub base_kv: f64,
}

fn default_source() -> String {
    "ieee33".into()
}
fn default_background_scale() -> f64 {
    0.2
}
fn default_base_mva() -> f64 {
    BaseUnits::default().power_mva
}
fn default_base_kv() -> f64 {
    BaseUnits::default().voltage_kv
}

impl Default for FeederConfig {
    fn default() -> Self {
        Self {
            source: default_source(),
            background_scale: default_background_scale(),
            base_mva: default_base_mva(),
            base_kv: default_base_kv(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Uniform droop gain; defaults to `1/λ_max(X)`.
    #[serde(default)]
    pub gain: Option<f64>,
    /// Bus ids with an inverter; all buses when absent.
    #[serde(default)]
    pub actuated_buses: Option<Vec<usize>>,
    #[serde(default = "default_deadband")]
    pub deadband_pu: f64,
    #[serde(default = "default_dq_max")]
    pub dq_max_pu: f64,
    #[serde(default = "default_window")]
    pub window_amp_s: f64,
    #[serde(default = "default_window")]
    pub window_bias_s: f64,
    #[serde(default = "default_eta")]
    pub eta_bias: f64,
    #[serde(default = "default_bias_min")]
    pub bias_min_pu: f64,
    #[serde(default = "default_bias_max")]
    pub bias_max_pu: f64,
}

fn default_deadband() -> f64 {
    ControlLimits::default().deadband
}
fn default_dq_max() -> f64 {
    ControlLimits::default().dq_max
}
fn default_window() -> f64 {
    120.0
}
fn default_eta() -> f64 {
    AdaptationParams::default().eta_bias
}
fn default_bias_min() -> f64 {
    AdaptationParams::default().bias_limits.0
}
fn default_bias_max() -> f64 {
    AdaptationParams::default().bias_limits.1
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gain: None,
            actuated_buses: None,
            deadband_pu: default_deadband(),
            dq_max_pu: default_dq_max(),
            window_amp_s: default_window(),
            window_bias_s: default_window(),
            eta_bias: default_eta(),
            bias_min_pu: default_bias_min(),
            bias_max_pu: default_bias_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataCenterConfig {
    Synthetic {
        bus: usize,
        p_comm_pu: f64,
        p_comp_pu: f64,
        #[serde(default)]
        w_comm_pu: f64,
        #[serde(default)]
        w_comp_pu: f64,
        period_comm_s: f64,
        period_comp_s: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `time_s,power_watts` file; relative paths resolve against the config.
    Csv {
        bus: usize,
        path: PathBuf,
        pu_per_watt: f64,
    },
}

impl DataCenterConfig {
    pub fn bus(&self) -> usize {
        match self {
            DataCenterConfig::Synthetic { bus, .. } | DataCenterConfig::Csv { bus, .. } => *bus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub activation_s: f64,
    #[serde(default = "default_kp")]
    pub k_p: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    /// Storage energy = peak data-center power × this duration.
    #[serde(default = "default_backup")]
    pub backup_s: f64,
    #[serde(default = "default_soc")]
    pub soc_init: f64,
    #[serde(default = "default_soc_min")]
    pub soc_min: f64,
    #[serde(default = "default_soc_max")]
    pub soc_max: f64,
}

fn yes() -> bool {
    true
}
fn default_kp() -> f64 {
    0.6
}
fn default_horizon() -> f64 {
    100.0
}
fn default_backup() -> f64 {
    60.0
}
fn default_soc() -> f64 {
    StorageSmoother::DEFAULT_SOC
}
fn default_soc_min() -> f64 {
    StorageSmoother::DEFAULT_BAND.0
}
fn default_soc_max() -> f64 {
    StorageSmoother::DEFAULT_BAND.1
}

/// Everything needed to run a config.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub adaptation: AdaptationParams,
    pub controller: ControllerKind,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        for ov in overrides {
            if let Err(msg) = apply_override(&mut table, ov) {
                problems.push(msg);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))
    }

    /// Reads and parses a file. A missing or unreadable file is a config error.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ctrl_every(&self) -> Option<usize> {
        let k = self.dt_ctrl_s / self.dt_sim_s;
        let r = k.round();
        (r >= 1.0 && (k - r).abs() <= 1e-9 * r).then_some(r as usize)
    }

    pub fn steps(&self) -> usize {
        (self.duration_s / self.dt_sim_s).round() as usize
    }

    fn window_steps(&self, seconds: f64) -> usize {
        (seconds / self.dt_ctrl_s).round() as usize
    }

    pub fn adaptation(&self) -> AdaptationParams {
        AdaptationParams {
            window_amp: self.window_steps(self.control.window_amp_s),
            window_bias: self.window_steps(self.control.window_bias_s),
            eta_bias: self.control.eta_bias,
            bias_limits: (self.control.bias_min_pu, self.control.bias_max_pu),
            adapt: true,
        }
    }

    fn load_feeder(&self, base_dir: &Path) -> Result<FeederModel> {
        let base = BaseUnits {
            power_mva: self.feeder.base_mva,
            voltage_kv: self.feeder.base_kv,
        };
        if self.feeder.source == "ieee33" {
            if base == BaseUnits::default() {
                return Ok(FeederModel::ieee33());
            }
            return Err(Error::Config(vec![
                "feeder.base_mva/base_kv only apply to file feeders; the bundled 33-bus data uses 10 MVA / 12.66 kV"
                    .into(),
            ]));
        }
        load_line_table(&base_dir.join(&self.feeder.source), base)
    }

    /// Every problem that can be seen without touching the filesystem.
    pub fn problems(&self, feeder: &FeederModel) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            out.push(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.dt_sim_s.is_finite() && self.dt_sim_s > 0.0) {
            out.push(format!("dt_sim_s must be positive, got {}", self.dt_sim_s));
        } else if self.ctrl_every().is_none() {
            out.push(format!(
                "dt_ctrl_s ({}) must be a positive integer multiple of dt_sim_s ({})",
                self.dt_ctrl_s, self.dt_sim_s
            ));
        }
        if !(self.burn_in_s >= 0.0 && self.burn_in_s < self.duration_s) {
            out.push(format!("burn_in_s must lie in [0, duration_s), got {}", self.burn_in_s));
        }
        if !(self.feeder.background_scale.is_finite() && self.feeder.background_scale >= 0.0) {
            out.push(format!("feeder.background_scale must be >= 0, got {}", self.feeder.background_scale));
        }
        let c = &self.control;
        if let Some(g) = c.gain {
            if !(g.is_finite() && g > 0.0) {
                out.push(format!("control.gain must be positive, got {g}"));
            }
        }
        if let Some(buses) = &c.actuated_buses {
            for b in buses {
                if feeder.index_of(*b).is_none() {
                    out.push(format!("control.actuated_buses: {b} is not a non-slack bus of the feeder"));
                }
            }
        }
        if !(c.deadband_pu >= 0.0 && c.deadband_pu.is_finite()) {
            out.push(format!("control.deadband_pu must be >= 0, got {}", c.deadband_pu));
        }
        if !(c.dq_max_pu > 0.0) {
            out.push(format!("control.dq_max_pu must be > 0, got {}", c.dq_max_pu));
        }
        if self.dt_ctrl_s > 0.0 {
            out.extend(self.adaptation().problems().into_iter().map(|p| format!("control: {p}")));
        }
        if self.data_center.is_empty() {
            out.push("at least one [[data_center]] is required".into());
        }
        for (k, dc) in self.data_center.iter().enumerate() {
            let bus = dc.bus();
            if bus == feeder.slack() {
                out.push(format!("data_center.{k}: bus {bus} is the slack bus"));
            } else if feeder.index_of(bus).is_none() {
                out.push(format!("data_center.{k}: bus {bus} does not exist"));
            }
            if self.data_center[..k].iter().any(|o| o.bus() == bus) {
                out.push(format!("data_center.{k}: bus {bus} already hosts a data center"));
            }
            match dc {
                DataCenterConfig::Synthetic {
                    p_comm_pu,
                    p_comp_pu,
                    w_comm_pu,
                    w_comp_pu,
                    period_comm_s,
                    period_comp_s,
                    ..
                } => {
                    let prof = TwoModeProfile {
                        p_comm: *p_comm_pu,
                        p_comp: *p_comp_pu,
                        w_comm: *w_comm_pu,
                        w_comp: *w_comp_pu,
                        period_comm_s: *period_comm_s,
                        period_comp_s: *period_comp_s,
                        noise_seed: 0,
                    };
                    out.extend(prof.problems().into_iter().map(|p| format!("data_center.{k}: {p}")));
                }
                DataCenterConfig::Csv { pu_per_watt, .. } => {
                    if !(pu_per_watt.is_finite() && *pu_per_watt > 0.0) {
                        out.push(format!("data_center.{k}: pu_per_watt must be positive"));
                    }
                }
            }
        }
        if let Some(s) = &self.smoothing {
            if !(s.activation_s >= 0.0) {
                out.push(format!("smoothing.activation_s must be >= 0, got {}", s.activation_s));
            }
            if !(s.k_p >= 0.0 && s.k_p.is_finite()) {
                out.push(format!("smoothing.k_p must be >= 0, got {}", s.k_p));
            }
            if !(s.horizon_s > 0.0) {
                out.push(format!("smoothing.horizon_s must be > 0, got {}", s.horizon_s));
            }
            if !(s.backup_s > 0.0) {
                out.push(format!("smoothing.backup_s must be > 0, got {}", s.backup_s));
            }
            if !(0.0 <= s.soc_min && s.soc_min <= s.soc_init && s.soc_init <= s.soc_max && s.soc_max <= 1.0) {
                out.push(format!(
                    "smoothing: need 0 <= soc_min <= soc_init <= soc_max <= 1, got {} / {} / {}",
                    s.soc_min, s.soc_init, s.soc_max
                ));
            }
        }
        out
    }

    /// Validates and assembles the scenario; `base_dir` anchors relative paths.
    pub fn build(&self, base_dir: &Path) -> Result<BuiltScenario> {
        let feeder = self.load_feeder(base_dir)?;
        let problems = self.problems(&feeder);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let n = feeder.n();
        let ctrl_every = self.ctrl_every().expect("checked above");
        let steps = self.steps();
        let background = if self.feeder.source == "ieee33" {
            feeder.ieee33_background(self.feeder.background_scale)
        } else {
            vec![0.0; n]
        };

        let mut data_centers = Vec::with_capacity(self.data_center.len());
        let mut problems = Vec::new();
        for (k, dc) in self.data_center.iter().enumerate() {
            let idx = feeder.index_of(dc.bus()).expect("checked above");
            match dc {
                DataCenterConfig::Synthetic {
                    p_comm_pu,
                    p_comp_pu,
                    w_comm_pu,
                    w_comp_pu,
                    period_comm_s,
                    period_comp_s,
                    seed,
                    ..
                } => {
                    let prof = TwoModeProfile {
                        p_comm: *p_comm_pu,
                        p_comp: *p_comp_pu,
                        w_comm: *w_comm_pu,
                        w_comp: *w_comp_pu,
                        period_comm_s: *period_comm_s,
                        period_comp_s: *period_comp_s,
                        noise_seed: seed.unwrap_or(self.seed.wrapping_add(k as u64)),
                    };
                    let trace = generate_trace(&prof, self.duration_s, self.dt_sim_s, idx, &background)?;
                    data_centers.push(DataCenterLoad::from(&trace));
                }
                DataCenterConfig::Csv { path, pu_per_watt, .. } => {
                    let series = read_power_csv(&base_dir.join(path), self.dt_sim_s)?;
                    if series.watts.len() < steps {
                        problems.push(format!(
                            "data_center.{k}: {} covers {} s, scenario needs {} s",
                            path.display(),
                            series.watts.len() as f64 * self.dt_sim_s,
                            self.duration_s
                        ));
                    }
                    data_centers.push(DataCenterLoad {
                        bus_index: idx,
                        injection: series.watts.iter().map(|w| -w * pu_per_watt).collect(),
                        modes: None,
                    });
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }

        let smoothing = match &self.smoothing {
            Some(s) if s.enabled => {
                let smoothers = data_centers
                    .iter()
                    .map(|dc| {
                        let peak = dc.injection.iter().map(|p| p.abs()).fold(0.0, f64::max);
                        let energy = StorageSmoother::capacity_for(peak, s.backup_s).max(f64::MIN_POSITIVE);
                        StorageSmoother::new(s.k_p, s.horizon_s, energy, s.soc_init, (s.soc_min, s.soc_max))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(SmoothingPlan {
                    smoothers,
                    activation_s: s.activation_s,
                })
            }
            _ => None,
        };

        let mut gain = match self.control.gain {
            Some(g) => DroopGain::uniform(n, g)?,
            None => DroopGain::default_for(feeder.x()),
        };
        if let Some(buses) = &self.control.actuated_buses {
            let idx: Vec<usize> = buses.iter().filter_map(|b| feeder.index_of(*b)).collect();
            gain = gain.restricted_to(&idx)?;
        }
        let adaptation = self.adaptation();
        let policy = match self.controller {
            ControllerKind::Fixed => ReferencePolicy::Fixed,
            ControllerKind::Switching => ReferencePolicy::Switching(SwitchingRefState::new(n, adaptation)?),
        };

        let mut scenario = Scenario::new(
            feeder,
            Injections::Workload {
                background,
                data_centers,
            },
            self.dt_sim_s,
            ctrl_every,
            steps,
        );
        scenario.gain = gain;
        scenario.limits = ControlLimits {
            deadband: self.control.deadband_pu,
            dq_max: self.control.dq_max_pu,
        };
        scenario.policy = policy;
        scenario.smoothing = smoothing;
        scenario.burn_in_s = self.burn_in_s;
        Ok(BuiltScenario {
            scenario,
            adaptation,
            controller: self.controller,
        })
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// literal when possible, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(format!("override `{spec}` has an empty key"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = &mut *table;
    for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
        let next_is_index = parts[depth + 1].parse::<usize>().is_ok();
        let entry = cur.entry(part.to_string()).or_insert_with(|| {
            if next_is_index {
                toml::Value::Array(Vec::new())
            } else {
                toml::Value::Table(toml::Table::new())
            }
        });
        match entry {
            toml::Value::Table(t) => cur = t,
            toml::Value::Array(items) => {
                let idx: usize = parts[depth + 1]
                    .parse()
                    .map_err(|_| format!("override `{key}`: `{part}` is a list, expected an index after it"))?;
                let len = items.len();
                let item = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("override `{key}`: index {idx} out of range (len {len})"))?;
                let rest = &parts[depth + 2..];
                let toml::Value::Table(t) = item else {
                    return Err(format!("override `{key}`: {part}.{idx} is not a table"));
                };
                if rest.is_empty() {
                    return Err(format!("override `{key}`: cannot replace a whole list entry"));
                }
                let joined = format!("{}={raw}", rest.join("."));
                return apply_override(t, &joined);
            }
            _ => return Err(format!("override `{key}`: `{part}` is not a table")),
        }
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Slack bus id used by the bundled feeder.
pub const DEFAULT_SLACK: usize = IEEE33_SLACK;
