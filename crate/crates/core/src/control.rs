//! Volt-VAR droop with a fixed or a switching voltage reference.
//!
//! Both controllers share the update `q ← q − K (v − v_ref)` with a symmetric
//! deadband on the tracking error and a per-update clip on `Δq`. They differ
//! only in where `v_ref` comes from.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::Mode;

/// Diagonal droop gain. Buses with zero gain are not actuated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroopGain {
    k: Vec<f64>,
}

impl DroopGain {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = k.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("gain at bus index {i} must be finite and >= 0, got {v}")));
        }
        Ok(Self { k })
    }

    pub fn uniform(n: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; n])
    }

    /// `k I` with `k = 1 / λ_max(X)`.
    pub fn default_for(x: &DMatrix<f64>) -> Self {
        let lambda_max = SymmetricEigen::new(x.clone()).eigenvalues.max();
        Self {
            k: vec![1.0 / lambda_max; x.nrows()],
        }
    }

    /// Keeps the gain only on the listed state indices.
    pub fn restricted_to(mut self, actuated: &[usize]) -> Result<Self> {
        let n = self.k.len();
        if let Some(&bad) = actuated.iter().find(|&&i| i >= n) {
            return Err(Error::Validation(format!("actuated bus index {bad} out of range for {n} buses")));
        }
        for (i, k) in self.k.iter_mut().enumerate() {
            if !actuated.contains(&i) {
                *k = 0.0;
            }
        }
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn actuated(&self) -> impl Iterator<Item = usize> + '_ {
        self.k.iter().enumerate().filter(|(_, k)| **k > 0.0).map(|(i, _)| i)
    }

    pub fn as_diagonal(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    /// Symmetric deadband on `v - v_ref` (p.u.).
    pub deadband: f64,
    /// Largest `|Δq|` per control update (p.u.).
    pub dq_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            deadband: 0.02,
            dq_max: 0.01,
        }
    }
}

impl ControlLimits {
    /// No deadband, no saturation: the pure linear droop law.
    pub fn disabled() -> Self {
        Self {
            deadband: 0.0,
            dq_max: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) || !(self.dq_max > 0.0) {
            return Err(Error::Validation(format!(
                "deadband must be >= 0 and dq_max > 0 (got {} and {})",
                self.deadband, self.dq_max
            )));
        }
        Ok(())
    }
}

/// One droop update; returns `(q_next, dq)`.
pub fn droop_update(
    q: &[f64],
    v: &[f64],
    v_ref: &[f64],
    gain: &DroopGain,
    limits: &ControlLimits,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q.len();
    Error::check_len("droop_update (v)", n, v.len())?;
    Error::check_len("droop_update (v_ref)", n, v_ref.len())?;
    Error::check_len("droop_update (gain)", n, gain.len())?;
    let mut q_next = q.to_vec();
    let mut dq = vec![0.0; n];
    droop_update_in_place(&mut q_next, v, v_ref, gain, limits, &mut dq);
    Ok((q_next, dq))
}

/// In-place form of [`droop_update`]; lengths are not checked.
pub fn droop_update_in_place(
    q: &mut [f64],
    v: &[f64],
    v_ref: &[f64],
    gain: &DroopGain,
    limits: &ControlLimits,
    dq: &mut [f64],
) {
    for i in 0..q.len() {
        let e = v[i] - v_ref[i];
        let step = if e.abs() <= limits.deadband {
            0.0
        } else {
            (-gain.k[i] * e).clamp(-limits.dq_max, limits.dq_max)
        };
        dq[i] = step;
        q[i] += step;
    }
}

/// The conventional 1 p.u. reference.
pub fn fixed_reference(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Tuning of the measurement-based reference adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    /// Amplitude window `L_a`, in control steps.
    pub window_amp: usize,
    /// Bias window `L_b`, in control steps.
    pub window_bias: usize,
    /// Bias smoothing gain in (0, 1].
    pub eta_bias: f64,
    /// Bias is kept inside this band.
    pub bias_limits: (f64, f64),
    /// With `false` the state stays at bias 1 / amplitude 0, which is the
    /// fixed-reference controller.
    pub adapt: bool,
}

impl Default for AdaptationParams {
    fn default() -> Self {
        Self {
            window_amp: 120,
            window_bias: 120,
            eta_bias: 0.005,
            bias_limits: (0.9, 1.1),
            adapt: true,
        }
    }
}

impl AdaptationParams {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.window_amp < 2 {
            out.push(format!("amplitude window must hold at least 2 samples, got {}", self.window_amp));
        }
        if self.window_bias < 1 {
            out.push("bias window must hold at least 1 sample".to_string());
        }
        if !(self.eta_bias > 0.0 && self.eta_bias <= 1.0) {
            out.push(format!("eta_bias must lie in (0, 1], got {}", self.eta_bias));
        }
        if !(self.bias_limits.0 < self.bias_limits.1) {
            out.push(format!("bias limits {:?} must be increasing", self.bias_limits));
        }
        out
    }
}

/// Per-bus state of the switching reference `v_ref = bias + sign * amp`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingRefState {
    bias: Vec<f64>,
    amp: Vec<f64>,
    sign: Vec<i8>,
    windows: Vec<VecDeque<f64>>,
    params: AdaptationParams,
}

impl SwitchingRefState {
    pub fn new(n: usize, params: AdaptationParams) -> Result<Self> {
        let problems = params.problems();
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        let cap = params.window_amp.max(params.window_bias);
        Ok(Self {
            bias: vec![1.0; n],
            amp: vec![0.0; n],
            sign: vec![-1; n],
            windows: vec![VecDeque::with_capacity(cap); n],
            params,
        })
    }

    pub fn n(&self) -> usize {
        self.bias.len()
    }

    pub fn params(&self) -> &AdaptationParams {
        &self.params
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn amp(&self) -> &[f64] {
        &self.amp
    }

    pub fn sign(&self) -> &[i8] {
        &self.sign
    }

    pub fn window(&self, bus: usize) -> &VecDeque<f64> {
        &self.windows[bus]
    }

    /// Overrides the bias, e.g. to start from a known operating point.
    pub fn set_bias(&mut self, bias: &[f64]) -> Result<()> {
        Error::check_len("set_bias", self.n(), bias.len())?;
        self.bias.copy_from_slice(bias);
        Ok(())
    }

    /// Appends the latest sample to every bus window, dropping the oldest once
    /// `max(L_a, L_b)` samples are held.
    pub fn push_measurement(&mut self, v_now: &[f64]) -> Result<()> {
        Error::check_len("push_measurement", self.n(), v_now.len())?;
        let cap = self.params.window_amp.max(self.params.window_bias);
        for (w, &v) in self.windows.iter_mut().zip(v_now) {
            if w.len() == cap {
                w.pop_front();
            }
            w.push_back(v);
        }
        Ok(())
    }

    /// Half the largest one-step change among the last `L_a` samples.
    /// Leaves the amplitude untouched while fewer than two samples exist.
    pub fn update_amplitude(&mut self, bus: usize) {
        let w = &self.windows[bus];
        if w.len() < 2 {
            return;
        }
        let skip = w.len().saturating_sub(self.params.window_amp);
        let recent = w.iter().skip(skip);
        let max_step = recent
            .clone()
            .zip(recent.skip(1))
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        self.amp[bus] = 0.5 * max_step;
    }

    /// `½ (max + min) − 1` over the last `L_b` samples.
    pub fn bias_correction(&self, bus: usize) -> Option<f64> {
        let w = &self.windows[bus];
        if w.is_empty() {
            return None;
        }
        let skip = w.len().saturating_sub(self.params.window_bias);
        let (lo, hi) = w
            .iter()
            .skip(skip)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Some(0.5 * (hi + lo) - 1.0)
    }

    pub fn update_bias(&mut self, bus: usize) {
        if let Some(db) = self.bias_correction(bus) {
            let (lo, hi) = self.params.bias_limits;
            self.bias[bus] = (self.bias[bus] - self.params.eta_bias * db).clamp(lo, hi);
        }
    }

    /// `+1` strictly above the bias, `−1` otherwise.
    pub fn select_sign(&mut self, v_now: &[f64]) {
        for ((s, &v), &b) in self.sign.iter_mut().zip(v_now).zip(&self.bias) {
            *s = if v > b { 1 } else { -1 };
        }
    }

    pub fn reference_into(&self, out: &mut [f64]) {
        for i in 0..self.n() {
            out[i] = self.bias[i] + f64::from(self.sign[i]) * self.amp[i];
        }
    }

    pub fn reference(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.reference_into(&mut out);
        out
    }

    /// One control instant: record, adapt amplitude then bias, pick signs,
    /// emit the reference.
    pub fn step(&mut self, v_now: &[f64]) -> Result<Vec<f64>> {
        self.push_measurement(v_now)?;
        self.adapt_and_select(v_now);
        Ok(self.reference())
    }

    fn adapt_and_select(&mut self, v_now: &[f64]) {
        if self.params.adapt {
            for bus in 0..self.n() {
                self.update_amplitude(bus);
                self.update_bias(bus);
            }
        }
        self.select_sign(v_now);
    }
}

/// Source of the voltage reference at each control instant.
#[derive(Debug, Clone)]
pub enum ReferencePolicy {
    Fixed,
    Switching(SwitchingRefState),
    /// Reference chosen from the true data-center mode.
    ModeMatched { comm: Vec<f64>, comp: Vec<f64> },
    /// Precomputed references, one per control instant.
    Scheduled { refs: Vec<Vec<f64>>, cursor: usize },
}

impl ReferencePolicy {
    pub fn scheduled(refs: Vec<Vec<f64>>) -> Self {
        ReferencePolicy::Scheduled { refs, cursor: 0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferencePolicy::Fixed => "fixed",
            ReferencePolicy::Switching(_) => "switching",
            ReferencePolicy::ModeMatched { .. } => "mode-matched",
            ReferencePolicy::Scheduled { .. } => "scheduled",
        }
    }

    pub fn switching_state(&self) -> Option<&SwitchingRefState> {
        match self {
            ReferencePolicy::Switching(s) => Some(s),
            _ => None,
        }
    }

    /// Writes the reference for this control instant into `out`.
    pub fn next_reference(&mut self, v_now: &[f64], mode: Option<Mode>, out: &mut [f64]) -> Result<()> {
        match self {
            ReferencePolicy::Fixed => out.fill(1.0),
            ReferencePolicy::Switching(state) => {
                state.push_measurement(v_now)?;
                state.adapt_and_select(v_now);
                state.reference_into(out);
            }
            ReferencePolicy::ModeMatched { comm, comp } => {
                let levels = match mode {
                    Some(Mode::Communication) => comm,
                    Some(Mode::Computation) => comp,
                    None => {
                        return Err(Error::Validation(
                            "mode-matched reference needs a trace with ground-truth modes".into(),
                        ))
                    }
                };
                Error::check_len("mode-matched reference", out.len(), levels.len())?;
                out.copy_from_slice(levels);
            }
            ReferencePolicy::Scheduled { refs, cursor } => {
                let r = refs.get(*cursor).ok_or_else(|| {
                    Error::Validation(format!("reference schedule exhausted after {} instants", refs.len()))
                })?;
                Error::check_len("scheduled reference", out.len(), r.len())?;
                out.copy_from_slice(r);
                *cursor += 1;
            }
        }
        Ok(())
    }
}
