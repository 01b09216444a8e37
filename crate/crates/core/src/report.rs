//! Output files.
//!
//! `trajectory.csv` has one row per sim step:
//! `time_s, control, violation, v_<bus>..., q_<bus>..., vref_<bus>...` and,
//! when storage ran, `soc_dc<k>..., z_dc<k>...`. `control` is 1 at control
//! instants; `violation` is 1 when any bus is outside 1 ± 0.05.
//!
//! Summaries are pretty-printed JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::ContractionCertificate;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::{Comparison, DataCenterLoad, MetricDeltas, Metrics, SimResult, VIOLATION_BAND};
use crate::workload::Mode;

/// Opens `path` for writing, refusing to replace an existing file unless
/// `force` is set.
pub fn create_output(path: &Path, force: bool) -> Result<BufWriter<File>> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Fails before any file is written if one of `paths` exists.
pub fn check_outputs(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Exists(p.clone())),
        None => Ok(()),
    }
}

pub fn trajectory_header(res: &SimResult) -> Vec<String> {
    let mut h = vec!["time_s".to_string(), "control".into(), "violation".into()];
    for prefix in ["v", "q", "vref"] {
        h.extend(res.buses.iter().map(|b| format!("{prefix}_{b}")));
    }
    if let Some(st) = &res.storage {
        let k = st.soc.first().map_or(0, Vec::len);
        h.extend((0..k).map(|i| format!("soc_dc{i}")));
        h.extend((0..k).map(|i| format!("z_dc{i}")));
    }
    h
}

pub fn write_trajectory_csv<W: Write>(res: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(res))?;
    let mut row: Vec<String> = Vec::new();
    for s in 0..res.len() {
        row.clear();
        row.push(res.time(s).to_string());
        row.push(u8::from(res.is_control_step(s)).to_string());
        let viol = res.v[s].iter().any(|v| (v - 1.0).abs() > VIOLATION_BAND);
        row.push(u8::from(viol).to_string());
        for series in [&res.v[s], &res.q[s], &res.v_ref[s]] {
            row.extend(series.iter().map(f64::to_string));
        }
        if let Some(st) = &res.storage {
            row.extend(st.soc[s].iter().map(f64::to_string));
            row.extend(st.z[s].iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `time_s,power_watts,mode` for one data center; readable by
/// [`read_power_csv`](crate::workload::read_power_csv).
pub fn write_trace_csv<W: Write>(dc: &DataCenterLoad, dt: f64, watts_per_pu: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "power_watts", "mode"])?;
    for (k, p) in dc.injection.iter().enumerate() {
        let mode = match dc.modes.as_ref().map(|m| m[k]) {
            Some(Mode::Communication) => "communication",
            Some(Mode::Computation) => "computation",
            None => "",
        };
        w.write_record([(k as f64 * dt).to_string(), (-p * watts_per_pu).to_string(), mode.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub controller: &'a str,
    pub steps: usize,
    pub control_instants: usize,
    pub metrics: &'a Metrics,
    pub certificate: Option<&'a ContractionCertificate>,
    pub config: Option<&'a ScenarioConfig>,
}

impl<'a> RunSummary<'a> {
    pub fn new(res: &'a SimResult, cert: Option<&'a ContractionCertificate>, config: Option<&'a ScenarioConfig>) -> Self {
        Self {
            controller: &res.controller,
            steps: res.len(),
            control_instants: res.control_steps.len(),
            metrics: &res.metrics,
            certificate: cert,
            config,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary<'a> {
    pub fixed: &'a Metrics,
    pub switching: &'a Metrics,
    /// Switching minus fixed.
    pub deltas: &'a MetricDeltas,
    pub certificate: Option<&'a ContractionCertificate>,
    pub config: Option<&'a ScenarioConfig>,
}

impl<'a> CompareSummary<'a> {
    pub fn new(c: &'a Comparison, config: Option<&'a ScenarioConfig>) -> Self {
        Self {
            fixed: &c.fixed.metrics,
            switching: &c.switching.metrics,
            deltas: &c.deltas,
            certificate: c.certificate.as_ref(),
            config,
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
