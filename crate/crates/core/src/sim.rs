//! Two-time-scale closed-loop simulation: loads and voltages advance every
//! `dt_sim`, the controller acts every `ctrl_every` sim steps.

use serde::{Deserialize, Serialize};

use crate::analysis::ContractionCertificate;
use crate::control::{droop_update_in_place, AdaptationParams, ControlLimits, DroopGain, ReferencePolicy, SwitchingRefState};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::workload::{Mode, RollingMean, StorageSmoother, WorkloadTrace};

/// |v − 1| above this counts as a violation.
pub const VIOLATION_BAND: f64 = 0.05;

/// Data-center injection at one bus, excluding background.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCenterLoad {
    pub bus_index: usize,
    pub injection: Vec<f64>,
    pub modes: Option<Vec<Mode>>,
}

impl From<&WorkloadTrace> for DataCenterLoad {
    fn from(t: &WorkloadTrace) -> Self {
        Self {
            bus_index: t.dc_bus(),
            injection: t.dc_injection().to_vec(),
            modes: t.modes().map(<[Mode]>::to_vec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Injections {
    Workload {
        background: Vec<f64>,
        data_centers: Vec<DataCenterLoad>,
    },
    /// Full injection vector per sim step.
    Explicit(Vec<Vec<f64>>),
}

/// Storage smoothing at every data center, switched on at `activation_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingPlan {
    /// One per data center, in the same order.
    pub smoothers: Vec<StorageSmoother>,
    pub activation_s: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub feeder: FeederModel,
    pub injections: Injections,
    pub gain: DroopGain,
    pub limits: ControlLimits,
    pub policy: ReferencePolicy,
    pub dt_sim: f64,
    pub ctrl_every: usize,
    pub steps: usize,
    pub q0: Vec<f64>,
    pub smoothing: Option<SmoothingPlan>,
    /// Excluded from the metrics.
    pub burn_in_s: f64,
}

impl Scenario {
    /// Defaults: uniform gain `1/λ_max(X)`, default limits, fixed reference,
    /// q0 = 0, no smoothing, no burn-in.
    pub fn new(feeder: FeederModel, injections: Injections, dt_sim: f64, ctrl_every: usize, steps: usize) -> Self {
        let n = feeder.n();
        Self {
            gain: DroopGain::default_for(feeder.x()),
            feeder,
            injections,
            limits: ControlLimits::default(),
            policy: ReferencePolicy::Fixed,
            dt_sim,
            ctrl_every,
            steps,
            q0: vec![0.0; n],
            smoothing: None,
            burn_in_s: 0.0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let n = self.feeder.n();
        let mut out = Vec::new();
        if !(self.dt_sim.is_finite() && self.dt_sim > 0.0) {
            out.push(format!("dt_sim must be positive, got {}", self.dt_sim));
        }
        if self.ctrl_every == 0 {
            out.push("control interval must be at least one sim step".into());
        }
        if self.steps == 0 {
            out.push("scenario has no steps".into());
        }
        if self.q0.len() != n {
            out.push(format!("q0 has {} entries, feeder has {n} buses", self.q0.len()));
        }
        if self.gain.len() != n {
            out.push(format!("gain has {} entries, feeder has {n} buses", self.gain.len()));
        }
        if let Err(e) = self.limits.validate() {
            out.push(e.to_string());
        }
        if !(self.burn_in_s >= 0.0) {
            out.push(format!("burn-in must be >= 0, got {}", self.burn_in_s));
        }
        match &self.injections {
            Injections::Workload {
                background,
                data_centers,
            } => {
                if background.len() != n {
                    out.push(format!("background has {} entries, feeder has {n} buses", background.len()));
                }
                for (k, dc) in data_centers.iter().enumerate() {
                    if dc.bus_index >= n {
                        out.push(format!("data center {k}: bus index {} out of range", dc.bus_index));
                    }
                    if data_centers[..k].iter().any(|o| o.bus_index == dc.bus_index) {
                        out.push(format!("data center {k}: bus index {} used twice", dc.bus_index));
                    }
                    if dc.injection.len() < self.steps {
                        out.push(format!(
                            "data center {k}: trace has {} samples, scenario needs {}",
                            dc.injection.len(),
                            self.steps
                        ));
                    }
                }
                if let Some(plan) = &self.smoothing {
                    if plan.smoothers.len() != data_centers.len() {
                        out.push(format!(
                            "{} storage units for {} data centers",
                            plan.smoothers.len(),
                            data_centers.len()
                        ));
                    }
                }
            }
            Injections::Explicit(rows) => {
                if rows.len() < self.steps {
                    out.push(format!("{} injection rows, scenario needs {}", rows.len(), self.steps));
                }
                if let Some(i) = rows.iter().position(|r| r.len() != n) {
                    out.push(format!("injection row {i} does not have {n} entries"));
                }
                if self.smoothing.is_some() {
                    out.push("smoothing requires data-center workloads".into());
                }
            }
        }
        if let ReferencePolicy::Switching(s) = &self.policy {
            if s.n() != n {
                out.push(format!("switching reference sized for {} buses, feeder has {n}", s.n()));
            }
        }
        out
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in_s / self.dt_sim - 1e-9).ceil().max(0.0) as usize
    }

    fn mode_at(&self, step: usize) -> Option<Mode> {
        match &self.injections {
            Injections::Workload { data_centers, .. } => data_centers
                .iter()
                .find_map(|dc| dc.modes.as_ref().map(|m| m[step])),
            Injections::Explicit(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub burn_in_steps: usize,
    pub max_abs_deviation: f64,
    pub violations: usize,
    pub total_effort: f64,
    pub per_bus_max_deviation: Vec<f64>,
    pub per_bus_violations: Vec<usize>,
    pub per_bus_effort: Vec<f64>,
}

/// Metrics over sim steps `>= burn_in_steps`.
pub fn compute_metrics(v: &[Vec<f64>], dq: &[Vec<f64>], control_steps: &[usize], burn_in_steps: usize) -> Metrics {
    let n = v.first().map_or(0, Vec::len);
    let mut dev = vec![0.0f64; n];
    let mut viol = vec![0usize; n];
    let mut effort = vec![0.0; n];
    for row in v.iter().skip(burn_in_steps) {
        for i in 0..n {
            let d = (row[i] - 1.0).abs();
            dev[i] = dev[i].max(d);
            if d > VIOLATION_BAND {
                viol[i] += 1;
            }
        }
    }
    for (row, &s) in dq.iter().zip(control_steps) {
        if s >= burn_in_steps {
            for i in 0..n {
                effort[i] += row[i].abs();
            }
        }
    }
    Metrics {
        burn_in_steps,
        max_abs_deviation: dev.iter().copied().fold(0.0, f64::max),
        violations: viol.iter().sum(),
        total_effort: effort.iter().sum(),
        per_bus_max_deviation: dev,
        per_bus_violations: viol,
        per_bus_effort: effort,
    }
}

/// Storage trajectories, one column per data center.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageRecord {
    pub soc: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub controller: String,
    pub dt_sim: f64,
    pub ctrl_every: usize,
    /// Bus ids in state order.
    pub buses: Vec<usize>,
    pub v: Vec<Vec<f64>>,
    /// Net injection actually applied.
    pub p: Vec<Vec<f64>>,
    /// Setpoint in force during the step.
    pub q: Vec<Vec<f64>>,
    /// Reference held since the latest control instant.
    pub v_ref: Vec<Vec<f64>>,
    pub control_steps: Vec<usize>,
    /// Per control instant.
    pub dq: Vec<Vec<f64>>,
    /// Per control instant; empty unless the switching reference ran.
    pub sign: Vec<Vec<i8>>,
    pub amp: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub storage: Option<StorageRecord>,
    pub metrics: Metrics,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt_sim
    }

    pub fn is_control_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.ctrl_every)
    }

    pub fn recompute_metrics(&self) -> Metrics {
        compute_metrics(&self.v, &self.dq, &self.control_steps, self.metrics.burn_in_steps)
    }

    /// Σ|dq| over control instants with time in `[start_s, end_s)`.
    pub fn effort_between(&self, start_s: f64, end_s: f64) -> f64 {
        self.control_steps
            .iter()
            .zip(&self.dq)
            .filter(|(s, _)| {
                let t = self.time(**s);
                t >= start_s - 1e-9 && t < end_s - 1e-9
            })
            .map(|(_, d)| d.iter().map(|x| x.abs()).sum::<f64>())
            .sum()
    }

    /// Tracking error `v − v_ref` at each control instant.
    pub fn tracking_errors(&self) -> Vec<Vec<f64>> {
        self.control_steps
            .iter()
            .map(|&s| self.v[s].iter().zip(&self.v_ref[s]).map(|(v, r)| v - r).collect())
            .collect()
    }
}

/// Runs the closed loop. The controller measures `v` produced by the current
/// injection and the previous setpoint; the new setpoint applies from the next
/// sim step.
pub fn run_scenario(sc: &Scenario) -> Result<SimResult> {
    let problems = sc.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n = sc.feeder.n();
    let mut policy = sc.policy.clone();
    let mut q = sc.q0.clone();
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut v_ref = vec![1.0; n];
    let mut dq = vec![0.0; n];

    let n_ctrl = sc.steps.div_ceil(sc.ctrl_every);
    let mut res = SimResult {
        controller: policy.name().to_string(),
        dt_sim: sc.dt_sim,
        ctrl_every: sc.ctrl_every,
        buses: sc.feeder.buses().to_vec(),
        v: Vec::with_capacity(sc.steps),
        p: Vec::with_capacity(sc.steps),
        q: Vec::with_capacity(sc.steps),
        v_ref: Vec::with_capacity(sc.steps),
        control_steps: Vec::with_capacity(n_ctrl),
        dq: Vec::with_capacity(n_ctrl),
        sign: Vec::new(),
        amp: Vec::new(),
        bias: Vec::new(),
        storage: None,
        metrics: compute_metrics(&[], &[], &[], 0),
    };

    let mut storage = sc.smoothing.as_ref().map(|plan| {
        let means: Vec<RollingMean> = plan
            .smoothers
            .iter()
            .map(|u| RollingMean::new((u.horizon_s / sc.dt_sim).round() as usize))
            .collect();
        let rec = StorageRecord {
            soc: Vec::with_capacity(sc.steps),
            z: Vec::with_capacity(sc.steps),
        };
        (plan.smoothers.clone(), means, plan.activation_s, rec)
    });

    for s in 0..sc.steps {
        match &sc.injections {
            Injections::Explicit(rows) => p.copy_from_slice(&rows[s]),
            Injections::Workload {
                background,
                data_centers,
            } => {
                p.copy_from_slice(background);
                match storage.as_mut() {
                    None => {
                        for dc in data_centers {
                            p[dc.bus_index] += dc.injection[s];
                        }
                    }
                    Some((units, means, activation_s, rec)) => {
                        let active = s as f64 * sc.dt_sim >= *activation_s - 1e-9;
                        let mut soc_row = Vec::with_capacity(units.len());
                        let mut z_row = Vec::with_capacity(units.len());
                        for ((dc, unit), mean) in data_centers.iter().zip(units.iter_mut()).zip(means.iter_mut()) {
                            let consumption = -dc.injection[s];
                            mean.push(consumption);
                            let net = if active {
                                let d = unit.dispatch(consumption, mean.mean().unwrap_or(consumption), sc.dt_sim);
                                z_row.push(d.z);
                                d.p_net
                            } else {
                                z_row.push(0.0);
                                consumption
                            };
                            soc_row.push(unit.soc);
                            p[dc.bus_index] -= net;
                        }
                        rec.soc.push(soc_row);
                        rec.z.push(z_row);
                    }
                }
            }
        }
        sc.feeder.voltage_into(&p, &q, &mut v);
        res.q.push(q.clone());
        if s % sc.ctrl_every == 0 {
            policy.next_reference(&v, sc.mode_at(s), &mut v_ref)?;
            droop_update_in_place(&mut q, &v, &v_ref, &sc.gain, &sc.limits, &mut dq);
            res.control_steps.push(s);
            res.dq.push(dq.clone());
            if let Some(st) = policy.switching_state() {
                res.sign.push(st.sign().to_vec());
                res.amp.push(st.amp().to_vec());
                res.bias.push(st.bias().to_vec());
            }
        }
        res.v.push(v.clone());
        res.p.push(p.clone());
        res.v_ref.push(v_ref.clone());
    }
    res.storage = storage.map(|(_, _, _, rec)| rec);
    res.metrics = res.recompute_metrics_with(sc.burn_in_steps());
    Ok(res)
}

impl SimResult {
    fn recompute_metrics_with(&self, burn_in_steps: usize) -> Metrics {
        compute_metrics(&self.v, &self.dq, &self.control_steps, burn_in_steps)
    }
}

/// Switching minus fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub max_abs_deviation: f64,
    pub violations: i64,
    pub total_effort: f64,
    /// `1 − switching / fixed`; zero when the fixed value is zero.
    pub deviation_reduction: f64,
    pub effort_reduction: f64,
}

pub fn metric_deltas(fixed: &Metrics, switching: &Metrics) -> MetricDeltas {
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { 1.0 - a / b };
    MetricDeltas {
        max_abs_deviation: switching.max_abs_deviation - fixed.max_abs_deviation,
        violations: switching.violations as i64 - fixed.violations as i64,
        total_effort: switching.total_effort - fixed.total_effort,
        deviation_reduction: ratio(switching.max_abs_deviation, fixed.max_abs_deviation),
        effort_reduction: ratio(switching.total_effort, fixed.total_effort),
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub fixed: SimResult,
    pub switching: SimResult,
    pub deltas: MetricDeltas,
    pub certificate: Option<ContractionCertificate>,
}

/// Runs `base` under the fixed and the switching reference with everything
/// else identical. `base.policy` is ignored.
pub fn compare_controllers(base: &Scenario, params: AdaptationParams) -> Result<Comparison> {
    let mut fixed = base.clone();
    fixed.policy = ReferencePolicy::Fixed;
    let mut switching = base.clone();
    switching.policy = ReferencePolicy::Switching(SwitchingRefState::new(base.feeder.n(), params)?);
    let (rf, rs) = std::thread::scope(|scope| {
        let h = scope.spawn(|| run_scenario(&fixed));
        let rs = run_scenario(&switching);
        (h.join().expect("fixed-reference run panicked"), rs)
    });
    let (fixed, switching) = (rf?, rs?);
    let deltas = metric_deltas(&fixed.metrics, &switching.metrics);
    Ok(Comparison {
        fixed,
        switching,
        deltas,
        certificate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{equilibrium_q, ideal_mode_references};
    use crate::workload::{generate_trace, TwoModeProfile};
    use approx::assert_abs_diff_eq;

    fn profile(seed: u64) -> TwoModeProfile {
        TwoModeProfile {
            p_comm: -0.05,
            p_comp: -0.28,
            w_comm: 0.0015,
            w_comp: 0.003,
            period_comm_s: 20.0,
            period_comp_s: 40.0,
            noise_seed: seed,
        }
    }

    fn dc_scenario(seconds: f64) -> Scenario {
        let f = FeederModel::ieee33();
        let bg = f.ieee33_background(0.2);
        let bus = f.index_of(22).unwrap();
        let trace = generate_trace(&profile(7), seconds, 0.1, bus, &bg).unwrap();
        let steps = trace.len();
        Scenario::new(
            f,
            Injections::Workload {
                background: bg,
                data_centers: vec![DataCenterLoad::from(&trace)],
            },
            0.1,
            10,
            steps,
        )
    }

    #[test]
    fn quiescent_load_keeps_q() {
        let f = FeederModel::ieee33();
        let p = f.ieee33_background(0.05);
        let sc = Scenario::new(f, Injections::Explicit(vec![p; 500]), 0.1, 10, 500);
        let r = run_scenario(&sc).unwrap();
        assert!(r.metrics.max_abs_deviation < 0.02);
        assert!(r.q.iter().all(|q| q == &r.q[0]));
        assert_eq!(r.metrics.total_effort, 0.0);
    }

    #[test]
    fn voltages_satisfy_linear_model() {
        let sc = dc_scenario(300.0);
        let r = run_scenario(&sc).unwrap();
        for s in 0..r.len() {
            let v = sc.feeder.solve_voltage(&r.p[s], &r.q[s]).unwrap();
            for i in 0..v.len() {
                assert!((v[i] - r.v[s][i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn q_changes_only_after_control_instants() {
        let mut sc = dc_scenario(300.0);
        sc.policy = ReferencePolicy::Switching(SwitchingRefState::new(32, AdaptationParams::default()).unwrap());
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.control_steps.len(), 300);
        assert!(r.control_steps.windows(2).all(|w| w[1] - w[0] == 10));
        for s in 1..r.len() {
            if r.q[s] != r.q[s - 1] {
                assert!(r.is_control_step(s - 1), "q moved at step {s}");
            }
        }
        assert_eq!(r.amp.len(), r.control_steps.len());
    }

    #[test]
    fn deterministic() {
        let mut sc = dc_scenario(200.0);
        sc.policy = ReferencePolicy::Switching(SwitchingRefState::new(32, AdaptationParams::default()).unwrap());
        assert_eq!(run_scenario(&sc).unwrap(), run_scenario(&sc).unwrap());
    }

    #[test]
    fn metrics_recompute_exactly() {
        let mut sc = dc_scenario(400.0);
        sc.burn_in_s = 100.0;
        let r = run_scenario(&sc).unwrap();
        assert_eq!(r.metrics.burn_in_steps, 1000);
        assert_eq!(r.recompute_metrics(), r.metrics);
    }

    #[test]
    fn metric_example() {
        let v = vec![vec![1.0, 1.06], vec![0.94, 1.01], vec![1.0, 1.0]];
        let dq = vec![vec![0.01, -0.02], vec![0.005, 0.0]];
        let m = compute_metrics(&v, &dq, &[0, 2], 1);
        assert_abs_diff_eq!(m.max_abs_deviation, 0.06, epsilon = 1e-12);
        assert_eq!(m.violations, 1);
        assert_abs_diff_eq!(m.total_effort, 0.005, epsilon = 1e-15);
    }

    #[test]
    fn config_problems_are_enumerated() {
        let mut sc = dc_scenario(10.0);
        sc.dt_sim = 0.0;
        sc.ctrl_every = 0;
        sc.q0 = vec![];
        match run_scenario(&sc) {
            Err(Error::Config(p)) => assert!(p.len() >= 3, "{p:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn zero_variation_gives_identical_controllers() {
        let f = FeederModel::ieee33();
        let p = f.ieee33_background(0.3);
        let q0 = equilibrium_q(&f, &p, &vec![1.0; f.n()]).unwrap();
        let mut sc = Scenario::new(f, Injections::Explicit(vec![p; 2000]), 0.1, 10, 2000);
        sc.q0 = q0;
        let c = compare_controllers(&sc, AdaptationParams::default()).unwrap();
        assert_eq!(c.fixed.v, c.switching.v);
        assert_eq!(c.fixed.q, c.switching.q);
        assert_eq!(c.deltas.total_effort, 0.0);
    }

    #[test]
    fn deltas_are_antisymmetric() {
        let c = compare_controllers(&dc_scenario(600.0), AdaptationParams::default()).unwrap();
        let fwd = metric_deltas(&c.fixed.metrics, &c.switching.metrics);
        let rev = metric_deltas(&c.switching.metrics, &c.fixed.metrics);
        assert_eq!(fwd.max_abs_deviation, -rev.max_abs_deviation);
        assert_eq!(fwd.violations, -rev.violations);
        assert_eq!(fwd.total_effort, -rev.total_effort);
    }

    #[test]
    fn fixed_equals_switching_without_adaptation() {
        let sc = dc_scenario(600.0);
        let frozen = AdaptationParams {
            adapt: false,
            ..Default::default()
        };
        let mut a = sc.clone();
        a.policy = ReferencePolicy::Switching(SwitchingRefState::new(32, frozen).unwrap());
        let ra = run_scenario(&a).unwrap();
        let rb = run_scenario(&sc).unwrap();
        assert_eq!(ra.v, rb.v);
        assert_eq!(ra.q, rb.q);
    }

    #[test]
    fn mode_matched_oracle_cancels_transitions() {
        let f = FeederModel::ieee33();
        let bg = f.ieee33_background(0.2);
        let bus = f.index_of(22).unwrap();
        let mut prof = profile(1);
        prof.w_comm = 0.0;
        prof.w_comp = 0.0;
        let trace = generate_trace(&prof, 400.0, 1.0, bus, &bg).unwrap();
        let mut p0 = bg.clone();
        p0[bus] += prof.p_comm;
        let mut p1 = bg.clone();
        p1[bus] += prof.p_comp;
        let (ref0, ref1) = ideal_mode_references(f.r(), &p0, &p1, &vec![1.0; f.n()]).unwrap();
        // start at the equilibrium of the first (computation) mode
        let q0 = equilibrium_q(&f, &p1, &ref1).unwrap();
        let steps = trace.len();
        let mut sc = Scenario::new(
            f,
            Injections::Workload {
                background: bg,
                data_centers: vec![DataCenterLoad::from(&trace)],
            },
            1.0,
            1,
            steps,
        );
        sc.limits = ControlLimits::disabled();
        sc.q0 = q0.clone();
        sc.policy = ReferencePolicy::ModeMatched { comm: ref0, comp: ref1 };
        let r = run_scenario(&sc).unwrap();
        for e in r.tracking_errors() {
            assert!(e.iter().all(|x| x.abs() < 1e-12));
        }
        assert!(r.q.iter().all(|q| q.iter().zip(&q0).all(|(a, b)| (a - b).abs() < 1e-10)));
    }

    #[test]
    fn smoothing_records_storage_and_holds_band() {
        let f = FeederModel::ieee33();
        let bg = f.ieee33_background(0.2);
        let bus = f.index_of(22).unwrap();
        let mut prof = profile(3);
        prof.period_comp_s = 10.0;
        prof.period_comm_s = 5.0;
        let trace = generate_trace(&prof, 300.0, 0.1, bus, &bg).unwrap();
        let steps = trace.len();
        let e = StorageSmoother::capacity_for(0.28, 60.0);
        let unit = StorageSmoother::new(0.6, 100.0, e, 0.95, (0.93, 0.97)).unwrap();
        let mut sc = Scenario::new(
            f,
            Injections::Workload {
                background: bg,
                data_centers: vec![DataCenterLoad::from(&trace)],
            },
            0.1,
            10,
            steps,
        );
        sc.smoothing = Some(SmoothingPlan {
            smoothers: vec![unit],
            activation_s: 100.0,
        });
        let r = run_scenario(&sc).unwrap();
        let st = r.storage.as_ref().unwrap();
        assert_eq!(st.soc.len(), steps);
        assert!(st.z[..1000].iter().all(|z| z[0] == 0.0));
        assert!(st.z[1000..].iter().any(|z| z[0] != 0.0));
        assert!(st.soc.iter().all(|s| (0.93..=0.97).contains(&s[0])));
        // applied injection = background + (−net consumption)
        for s in 0..steps {
            let net = -trace.dc_injection()[s] - st.z[s][0];
            assert_abs_diff_eq!(r.p[s][bus], sc_bg(bus) - net, epsilon = 1e-12);
        }
    }

    fn sc_bg(bus: usize) -> f64 {
        FeederModel::ieee33().ieee33_background(0.2)[bus]
    }
}
