//! Numerical checks of the stability and cancellation results on the 33-bus
//! feeder. Each check reports what it measured against its tolerance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    equilibrium_q, ideal_mode_references, limit_bound, measure_extrema, optimal_bias, step_error, theorem_bound,
    validate_gain, ContractionCertificate, ErrorSystem, SteadyStateExtrema,
};
use crate::control::{ControlLimits, DroopGain, ReferencePolicy};
use crate::error::Result;
use crate::feeder::FeederModel;
use crate::sim::{run_scenario, DataCenterLoad, Injections, Scenario, SimResult};
use crate::workload::{generate_trace, TwoModeProfile};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Uniform gain; `None` uses `1/λ_max(X)`.
    pub gain: Option<f64>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { gain: None, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub gain: f64,
    pub certificate: ContractionCertificate,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Default data-center bus of the bundled feeder.
const DC_BUS: usize = 22;

fn reference_profile() -> TwoModeProfile {
    TwoModeProfile {
        p_comm: -0.05,
        p_comp: -0.28,
        w_comm: 0.0015,
        w_comp: 0.003,
        period_comm_s: 20.0,
        period_comp_s: 40.0,
        noise_seed: 1,
    }
}

pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    let feeder = FeederModel::ieee33();
    let gain = match opts.gain {
        Some(k) => DroopGain::uniform(feeder.n(), k)?,
        None => DroopGain::default_for(feeder.x()),
    };
    let cert = validate_gain(feeder.x(), &gain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut checks = vec![
        check_gain_margin(&cert),
        check_lemma_agreement(&mut rng, 100),
        check_certificate_powers(&feeder, &gain, &cert),
        check_error_recursion(&feeder, &gain, &mut rng, 1000)?,
        check_theorem_bound(&feeder, &gain, &cert, &mut rng, 1000)?,
    ];
    checks.extend(check_mode_cancellation(&feeder, &gain, &cert)?);
    checks.push(check_optimal_bias_grid(&mut rng, 20)?);
    checks.push(check_bias_translation(&feeder, &gain, &cert, &mut rng)?);
    checks.push(check_half_deviation(&feeder, &gain)?);
    Ok(VerifyReport {
        gain: gain.values()[0],
        certificate: cert,
        checks,
    })
}

pub fn check_gain_margin(cert: &ContractionCertificate) -> CheckResult {
    let mut c = CheckResult {
        name: "gain_contraction".into(),
        passed: cert.valid && cert.margin >= 1e-6,
        measured: cert.margin,
        tolerance: 1e-6,
        detail: format!(
            "eig(I - X^1/2 K X^1/2) in [{:.6}, {:.6}], epsilon = {:.6}, {:?} certificate",
            cert.s_eigen_min, cert.s_eigen_max, cert.epsilon, cert.method
        ),
    };
    if !cert.valid {
        c.detail.insert_str(0, "gain outside the contraction region; ");
    }
    c
}

/// Random PD `X` (2..=8 buses) and diagonal `K` straddling the region
/// boundary; the eigenvalue test must agree with `0 ≺ K ≺ 2X⁻¹`.
pub fn check_lemma_agreement(rng: &mut ChaCha8Rng, trials: usize) -> CheckResult {
    let mut agree = 0;
    let mut inside = 0;
    for _ in 0..trials {
        let n = rng.gen_range(2..=8);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let x = &b * b.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.05..0.5);
        let lam_max = SymmetricEigen::new(x.clone()).eigenvalues.max();
        let k: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0) / lam_max).collect();
        let Ok(gain) = DroopGain::new(k.clone()) else { continue };
        let Ok(cert) = validate_gain(&x, &gain) else { continue };
        let x_inv = x.clone().try_inverse().expect("PD matrix inverts");
        let kd = DMatrix::from_diagonal(&DVector::from_vec(k.clone()));
        let m = x_inv * 2.0 - kd;
        let m = (&m + m.transpose()) * 0.5;
        let direct = k.iter().all(|&v| v > 0.0) && SymmetricEigen::new(m).eigenvalues.min() > 0.0;
        inside += usize::from(direct);
        agree += usize::from(direct == cert.valid);
    }
    CheckResult {
        name: "gain_condition_agreement".into(),
        passed: agree == trials,
        measured: agree as f64,
        tolerance: trials as f64,
        detail: format!("{agree}/{trials} agree ({inside} inside the region)"),
    }
}

pub fn check_certificate_powers(feeder: &FeederModel, gain: &DroopGain, cert: &ContractionCertificate) -> CheckResult {
    if !cert.valid {
        return CheckResult::failed("certificate_powers", "no valid certificate");
    }
    let sys = match ErrorSystem::new(feeder, gain) {
        Ok(s) => s,
        Err(e) => return CheckResult::failed("certificate_powers", e.to_string()),
    };
    let excess = cert.worst_power_excess(sys.a(), 1000);
    CheckResult::at_most("certificate_powers", excess, 1e-12, "max_k<=1000 of |A^k| - C eps^k")
}

/// Random bounded injections and references, limits off, one control per
/// step: the simulated error must follow `e' = A e + d`.
pub fn check_error_recursion(
    feeder: &FeederModel,
    gain: &DroopGain,
    rng: &mut ChaCha8Rng,
    steps: usize,
) -> Result<CheckResult> {
    let n = feeder.n();
    let bg = feeder.ieee33_background(0.5);
    let p: Vec<Vec<f64>> = (0..steps)
        .map(|_| bg.iter().map(|b| b + rng.gen_range(-0.01..0.01)).collect())
        .collect();
    let refs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n).map(|_| 1.0 + rng.gen_range(-0.02..0.02)).collect())
        .collect();
    let mut sc = Scenario::new(feeder.clone(), Injections::Explicit(p.clone()), 1.0, 1, steps);
    sc.gain = gain.clone();
    sc.limits = ControlLimits::disabled();
    sc.q0 = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    sc.policy = ReferencePolicy::scheduled(refs.clone());
    let res = run_scenario(&sc)?;
    let sim_e = res.tracking_errors();
    let sys = ErrorSystem::new(feeder, gain)?;

    let mut e = sim_e[0].clone();
    let mut worst: f64 = 0.0;
    for t in 0..steps - 1 {
        let dp: Vec<f64> = (0..n).map(|i| p[t + 1][i] - p[t][i]).collect();
        let dr: Vec<f64> = (0..n).map(|i| refs[t + 1][i] - refs[t][i]).collect();
        let d = crate::analysis::disturbance(sys.r(), &dp, &dr)?;
        e = step_error(&sys, &e, &d)?;
        for i in 0..n {
            worst = worst.max((e[i] - sim_e[t + 1][i]).abs() / sim_e[t + 1][i].abs().max(1.0));
        }
    }
    Ok(CheckResult::at_most(
        "error_recursion",
        worst,
        1e-10,
        format!("{steps} steps, max |e_sim - e_rec| (relative above 1)"),
    ))
}

pub fn check_theorem_bound(
    feeder: &FeederModel,
    gain: &DroopGain,
    cert: &ContractionCertificate,
    rng: &mut ChaCha8Rng,
    steps: usize,
) -> Result<CheckResult> {
    if !cert.valid {
        return Ok(CheckResult::failed("transient_bound", "no valid certificate"));
    }
    let n = feeder.n();
    let sys = ErrorSystem::new(feeder, gain)?;
    let d_bar = 1e-3;
    let d: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n).map(|_| rng.gen_range(-d_bar..d_bar)).collect())
        .collect();
    let e0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let bound = theorem_bound(cert, &e0, &d)?;
    let lim = limit_bound(cert, &vec![d_bar; n])?;

    let mut worst_ratio: f64 = 0.0;
    let mut e = e0;
    let mut e_zero = vec![0.0; n];
    let mut worst_limit: f64 = 0.0;
    for t in 0..steps {
        e = step_error(&sys, &e, &d[t])?;
        e_zero = step_error(&sys, &e_zero, &d[t])?;
        for i in 0..n {
            worst_ratio = worst_ratio.max(e[i].abs() / bound[t + 1][i]);
            worst_limit = worst_limit.max(e_zero[i].abs() / lim[i]);
        }
    }
    let measured = worst_ratio.max(worst_limit);
    Ok(CheckResult::at_most(
        "transient_bound",
        measured,
        1.0,
        format!("max |e_t| / bound = {worst_ratio:.3e}; max |e_t| / limit bound (e0 = 0) = {worst_limit:.3e}"),
    ))
}

/// Mode-matched references for `bias`, and the first tracking error from
/// q = 0 in the computation mode.
fn mode_refs(feeder: &FeederModel, profile: &TwoModeProfile, bias: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let bg = feeder.ieee33_background(0.2);
    let bus = feeder.index_of(DC_BUS).expect("bus exists");
    let mut p0 = bg.clone();
    p0[bus] += profile.p_comm;
    let mut p1 = bg;
    p1[bus] += profile.p_comp;
    let (ref0, ref1) = ideal_mode_references(feeder.r(), &p0, &p1, bias)?;
    let v0 = feeder.solve_voltage(&p1, &vec![0.0; feeder.n()])?;
    let e0 = v0.iter().zip(&ref1).map(|(v, r)| v - r).collect();
    Ok((ref0, ref1, e0))
}

/// Square wave at the data-center bus, 1 s steps, limits off, q0 = 0.
fn square_wave_run(
    feeder: &FeederModel,
    gain: &DroopGain,
    profile: &TwoModeProfile,
    bias: &[f64],
    steps: usize,
) -> Result<SimResult> {
    let bg = feeder.ieee33_background(0.2);
    let bus = feeder.index_of(DC_BUS).expect("bus exists");
    let (ref0, ref1, _) = mode_refs(feeder, profile, bias)?;
    let trace = generate_trace(profile, steps as f64, 1.0, bus, &bg)?;
    let mut sc = Scenario::new(
        feeder.clone(),
        Injections::Workload {
            background: bg,
            data_centers: vec![DataCenterLoad::from(&trace)],
        },
        1.0,
        1,
        steps,
    );
    sc.gain = gain.clone();
    sc.limits = ControlLimits::disabled();
    sc.policy = ReferencePolicy::ModeMatched { comm: ref0, comp: ref1 };
    run_scenario(&sc)
}

/// Mode-matched references on a noiseless square wave: zero disturbance and
/// vanishing error; with noise the disturbance stays within `|r_j| 2 w̄`.
pub fn check_mode_cancellation(
    feeder: &FeederModel,
    gain: &DroopGain,
    cert: &ContractionCertificate,
) -> Result<Vec<CheckResult>> {
    if !cert.valid {
        return Ok(vec![
            CheckResult::failed("mode_cancellation_disturbance", "no valid certificate"),
            CheckResult::failed("mode_cancellation_error", "no valid certificate"),
            CheckResult::failed("mode_cancellation_noise_bound", "no valid certificate"),
        ]);
    }
    let n = feeder.n();
    let mut clean = reference_profile();
    clean.w_comm = 0.0;
    clean.w_comp = 0.0;
    let ones = vec![1.0; n];
    let (_, _, e0) = mode_refs(feeder, &clean, &ones)?;
    let settle = cert.settling_steps(&e0, 1e-10)?;
    let res = square_wave_run(feeder, gain, &clean, &ones, settle + 600)?;
    let clean_len = res.len();
    let d_max = max_disturbance(feeder, &res)?.iter().copied().fold(0.0, f64::max);
    let e_max = res.tracking_errors()[settle..]
        .iter()
        .flat_map(|e| e.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);

    let noisy = reference_profile();
    let w_bar = noisy.w_comm.max(noisy.w_comp);
    let bus = feeder.index_of(DC_BUS).expect("bus exists");
    let res = square_wave_run(feeder, gain, &noisy, &ones, 3000)?;
    let d_abs = max_disturbance(feeder, &res)?;
    let ratio = (0..n)
        .map(|i| d_abs[i] / (feeder.r()[(i, bus)].abs() * 2.0 * w_bar))
        .fold(0.0, f64::max);

    Ok(vec![
        CheckResult::at_most("mode_cancellation_disturbance", d_max, 1e-12, format!("{clean_len} steps, no noise")),
        CheckResult::at_most(
            "mode_cancellation_error",
            e_max,
            1e-9,
            format!("max |e_t| for t >= {settle} (certificate bound below 1e-10)"),
        ),
        CheckResult::at_most("mode_cancellation_noise_bound", ratio, 1.0 + 1e-9, "max |d_t| / (|r_j| 2 w_bar)"),
    ])
}

/// Componentwise max over `t` of `|R (p_{t+1} − p_t) − (ref_{t+1} − ref_t)|`.
fn max_disturbance(feeder: &FeederModel, res: &SimResult) -> Result<Vec<f64>> {
    let n = feeder.n();
    let mut worst = vec![0.0f64; n];
    for t in 0..res.len() - 1 {
        let dp: Vec<f64> = (0..n).map(|i| res.p[t + 1][i] - res.p[t][i]).collect();
        let dr: Vec<f64> = (0..n).map(|i| res.v_ref[t + 1][i] - res.v_ref[t][i]).collect();
        let d = crate::analysis::disturbance(feeder.r(), &dp, &dr)?;
        for i in 0..n {
            worst[i] = worst[i].max(d[i].abs());
        }
    }
    Ok(worst)
}

/// Brute-force search over bias shifts versus the closed-form optimum.
pub fn check_optimal_bias_grid(rng: &mut ChaCha8Rng, pairs: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mid = 1.0 + rng.gen_range(-0.045..0.045);
        let half = rng.gen_range(0.0..0.03);
        let ext = SteadyStateExtrema {
            v_plus: vec![mid + half],
            v_minus: vec![mid - half],
            per_mode: None,
        };
        let b = rng.gen_range(0.97..1.03);
        let star = optimal_bias(&ext, &[b])?[0];
        let peak = |db: f64| (ext.v_plus[0] + db - 1.0).abs().max((ext.v_minus[0] + db - 1.0).abs());
        let best = (-500..=500)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, c| peak(*a).total_cmp(&peak(*c)))
            .expect("non-empty grid");
        worst = worst.max((best - (star - b)).abs());
    }
    Ok(CheckResult::at_most(
        "optimal_bias_grid",
        worst,
        1e-4,
        format!("{pairs} random extrema pairs, grid step 1e-4 over [-0.05, 0.05]"),
    ))
}

/// Shifting the bias by `Δb` shifts the steady-state extrema by `Δb`.
pub fn check_bias_translation(
    feeder: &FeederModel,
    gain: &DroopGain,
    cert: &ContractionCertificate,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult> {
    if !cert.valid {
        return Ok(CheckResult::failed("bias_translation", "no valid certificate"));
    }
    let n = feeder.n();
    let prof = reference_profile();
    let ones = vec![1.0; n];
    let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let shifted: Vec<f64> = shift.iter().map(|s| 1.0 + s).collect();
    // the two runs differ by a homogeneous transient started at -Δb
    let settle = cert.settling_steps(&shift, 1e-10)?;
    let window = 600;
    let a = square_wave_run(feeder, gain, &prof, &ones, settle + window)?;
    let b = square_wave_run(feeder, gain, &prof, &shifted, settle + window)?;
    let len = a.len();
    let ea = measure_extrema(&a.v, window)?;
    let eb = measure_extrema(&b.v, window)?;
    let worst = (0..n)
        .map(|i| {
            ((eb.v_plus[i] - ea.v_plus[i] - shift[i]).abs()).max((eb.v_minus[i] - ea.v_minus[i] - shift[i]).abs())
        })
        .fold(0.0, f64::max);
    Ok(CheckResult::at_most(
        "bias_translation",
        worst,
        1e-8,
        format!("extrema over the last {window} of {len} steps, |Δb| <= 0.01"),
    ))
}

/// One load step at the data-center bus, starting from equilibrium: the peak
/// deviation with the mode-shifted reference against the 1 p.u. reference.
pub fn half_deviation_ratio(feeder: &FeederModel, gain: &DroopGain, dp: f64) -> Result<f64> {
    let n = feeder.n();
    let bus = feeder.index_of(DC_BUS).expect("bus exists");
    let before = feeder.ieee33_background(0.2);
    let mut after = before.clone();
    after[bus] += dp;
    let steps = 400;
    let switch_at = 100;
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|t| if t < switch_at { before.clone() } else { after.clone() })
        .collect();
    let (ref_before, ref_after) = ideal_mode_references(feeder.r(), &before, &after, &vec![1.0; n])?;

    let run = |policy: ReferencePolicy, start_ref: &[f64]| -> Result<f64> {
        let mut sc = Scenario::new(feeder.clone(), Injections::Explicit(rows.clone()), 1.0, 1, steps);
        sc.gain = gain.clone();
        sc.limits = ControlLimits::disabled();
        sc.q0 = equilibrium_q(feeder, &before, start_ref)?;
        sc.policy = policy;
        let res = run_scenario(&sc)?;
        Ok(res.v[switch_at..]
            .iter()
            .flat_map(|v| v.iter().map(|x| (x - 1.0).abs()))
            .fold(0.0, f64::max))
    };
    let fixed = run(ReferencePolicy::Fixed, &vec![1.0; n])?;
    let refs: Vec<Vec<f64>> = (0..steps)
        .map(|t| if t < switch_at { ref_before.clone() } else { ref_after.clone() })
        .collect();
    let shifted = run(ReferencePolicy::scheduled(refs), &ref_before)?;
    Ok(shifted / fixed)
}

pub fn check_half_deviation(feeder: &FeederModel, gain: &DroopGain) -> Result<CheckResult> {
    let ratio = half_deviation_ratio(feeder, gain, -0.23)?;
    Ok(CheckResult::at_most(
        "half_deviation",
        ratio,
        0.55,
        "peak |v - 1| after a 0.23 p.u. step, shifted / fixed reference",
    ))
}
