//! Error dynamics of the droop loop and the contraction certificate that
//! bounds them.
//!
//! With `e_t = v_t − v_ref_t` the closed loop obeys `e_{t+1} = A e_t + d_t`
//! where `A = I − X K` and `d_t = R Δp_t − Δv_ref_t`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::control::DroopGain;
use crate::error::{Error, Result};
use crate::feeder::{FeederModel, PD_TOLERANCE};
use crate::workload::Mode;

/// Default power horizon for the empirical certificate.
pub const EMPIRICAL_HORIZON: usize = 1000;

/// Above this condition number of `P` the eigenvector route is not trusted.
const MAX_P_CONDITION: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct ErrorSystem {
    a: DMatrix<f64>,
    r: DMatrix<f64>,
    gain: DroopGain,
}

impl ErrorSystem {
    pub fn new(feeder: &FeederModel, gain: &DroopGain) -> Result<Self> {
        Self::from_parts(feeder.r(), feeder.x(), gain)
    }

    pub fn from_parts(r: &DMatrix<f64>, x: &DMatrix<f64>, gain: &DroopGain) -> Result<Self> {
        let n = x.nrows();
        Error::check_len("error system (X columns)", n, x.ncols())?;
        Error::check_len("error system (R)", n, r.nrows())?;
        Error::check_len("error system (gain)", n, gain.len())?;
        let mut a = -x.clone();
        for (j, k) in gain.values().iter().enumerate() {
            a.column_mut(j).scale_mut(*k);
        }
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        Ok(Self {
            a,
            r: r.clone(),
            gain: gain.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn gain(&self) -> &DroopGain {
        &self.gain
    }
}

/// `A e + d`.
pub fn step_error(system: &ErrorSystem, e: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = system.n();
    Error::check_len("step_error (e)", n, e.len())?;
    Error::check_len("step_error (d)", n, d.len())?;
    let mut out = d.to_vec();
    for j in 0..n {
        if e[j] != 0.0 {
            for (i, o) in out.iter_mut().enumerate() {
                *o += system.a[(i, j)] * e[j];
            }
        }
    }
    Ok(out)
}

/// `R dp − dv_ref`.
pub fn disturbance(r: &DMatrix<f64>, dp: &[f64], dv_ref: &[f64]) -> Result<Vec<f64>> {
    let n = r.nrows();
    Error::check_len("disturbance (dp)", n, dp.len())?;
    Error::check_len("disturbance (dv_ref)", n, dv_ref.len())?;
    let rdp = r * DVector::from_column_slice(dp);
    Ok(rdp.iter().zip(dv_ref).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateMethod {
    /// `C = |P||P⁻¹|` with `P = X^{1/2} Q`.
    Eigen,
    /// `C_ij = max_k |A^k|_ij / ε^k` over a finite horizon.
    Empirical,
}

/// `|A^k| ≤ C ε^k` elementwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub epsilon: f64,
    pub valid: bool,
    pub method: CertificateMethod,
    /// `1 − max |λ(I − X^{1/2} K X^{1/2})|`; positive iff the spectrum is in (−1, 1).
    pub margin: f64,
    pub s_eigen_min: f64,
    pub s_eigen_max: f64,
    pub p_condition: f64,
    pub reconstruction_error: f64,
    /// Row-major.
    pub c: Vec<Vec<f64>>,
}

impl ContractionCertificate {
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let n = self.c.len();
        DMatrix::from_fn(n, n, |i, j| self.c[i][j])
    }

    /// Largest `|A^k|_ij − C_ij ε^k` for `1 ≤ k ≤ k_max`; at most rounding
    /// noise for a sound certificate.
    pub fn worst_power_excess(&self, a: &DMatrix<f64>, k_max: usize) -> f64 {
        let c = self.c_matrix();
        let mut pow = a.clone();
        let mut eps_k = self.epsilon;
        let mut worst = f64::NEG_INFINITY;
        for _ in 1..=k_max {
            for (p, cij) in pow.iter().zip(c.iter()) {
                worst = worst.max(p.abs() - cij * eps_k);
            }
            pow = &pow * a;
            eps_k *= self.epsilon;
        }
        worst
    }

    /// Number of steps after which `max_i (C |e0|)_i ε^t` drops below `tol`.
    pub fn settling_steps(&self, e0: &[f64], tol: f64) -> Result<usize> {
        self.require_valid()?;
        let ce0 = self.c_matrix() * DVector::from_iterator(e0.len(), e0.iter().map(|e| e.abs()));
        let peak = ce0.max();
        if peak <= tol {
            return Ok(0);
        }
        if self.epsilon == 0.0 {
            return Ok(1);
        }
        Ok(((tol / peak).ln() / self.epsilon.ln()).ceil() as usize)
    }

    fn require_valid(&self) -> Result<()> {
        if self.valid && self.epsilon < 1.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "gain is outside the contraction region (epsilon = {}, margin = {})",
                self.epsilon, self.margin
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub horizon: usize,
    /// Skip the eigenvector construction.
    pub force_empirical: bool,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            horizon: EMPIRICAL_HORIZON,
            force_empirical: false,
        }
    }
}

pub fn validate_gain(x: &DMatrix<f64>, gain: &DroopGain) -> Result<ContractionCertificate> {
    validate_gain_with(x, gain, &CertificateOptions::default())
}

pub fn validate_gain_with(
    x: &DMatrix<f64>,
    gain: &DroopGain,
    opts: &CertificateOptions,
) -> Result<ContractionCertificate> {
    let n = x.nrows();
    Error::check_len("validate_gain (X columns)", n, x.ncols())?;
    Error::check_len("validate_gain (gain)", n, gain.len())?;
    let scale = x.amax().max(1.0);
    if (x - x.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Validation("X is not symmetric".into()));
    }
    let eig_x = SymmetricEigen::new(x.clone());
    let lam_min = eig_x.eigenvalues.min();
    if lam_min <= PD_TOLERANCE {
        return Err(Error::Validation(format!(
            "X is not positive definite (smallest eigenvalue {lam_min:e})"
        )));
    }
    let u = &eig_x.eigenvectors;
    let sqrt_l = eig_x.eigenvalues.map(f64::sqrt);
    let x_half = u * DMatrix::from_diagonal(&sqrt_l) * u.transpose();
    let x_half_inv = u * DMatrix::from_diagonal(&sqrt_l.map(|s| 1.0 / s)) * u.transpose();

    let k = gain.as_diagonal();
    let m = &x_half * &k * &x_half;
    let mut s = DMatrix::identity(n, n) - (&m + m.transpose()) * 0.5;
    s = (&s + s.transpose()) * 0.5;
    let eig_s = SymmetricEigen::new(s);
    let sigma = &eig_s.eigenvalues;
    let s_min = sigma.min();
    let s_max = sigma.max();
    let epsilon = sigma.amax();
    let margin = 1.0 - epsilon;
    let valid = margin > 0.0 && gain.values().iter().all(|&k| k > 0.0);

    let a = ErrorSystem::from_parts(x, x, gain)?.a;
    let p = &x_half * &eig_s.eigenvectors;
    let p_inv = eig_s.eigenvectors.transpose() * &x_half_inv;
    let recon = (&p * DMatrix::from_diagonal(sigma) * &p_inv - &a).amax();
    let p_condition = (eig_x.eigenvalues.max() / lam_min).sqrt();

    let trust_eigen = !opts.force_empirical && recon <= 1e-9 * (1.0 + a.amax()) && p_condition <= MAX_P_CONDITION;
    let (c, method) = if trust_eigen {
        (p.abs() * p_inv.abs(), CertificateMethod::Eigen)
    } else {
        (empirical_c(&a, epsilon, opts.horizon), CertificateMethod::Empirical)
    };
    let valid = valid && c.iter().all(|v| v.is_finite());

    Ok(ContractionCertificate {
        epsilon,
        valid,
        method,
        margin,
        s_eigen_min: s_min,
        s_eigen_max: s_max,
        p_condition,
        reconstruction_error: recon,
        c: c.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

fn empirical_c(a: &DMatrix<f64>, epsilon: f64, horizon: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let eps = epsilon.max(f64::EPSILON);
    let scaled = a / eps;
    let mut pow = DMatrix::identity(n, n);
    let mut c = pow.abs();
    for _ in 0..horizon {
        pow = &pow * &scaled;
        c.zip_apply(&pow, |ci, p| *ci = ci.max(p.abs()));
    }
    c
}

/// Right-hand side of the transient bound for `t = 0..=d_seq.len()`.
pub fn theorem_bound(cert: &ContractionCertificate, e0: &[f64], d_seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    cert.require_valid()?;
    let n = cert.c.len();
    Error::check_len("theorem_bound (e0)", n, e0.len())?;
    let c = cert.c_matrix();
    let e0_abs = DVector::from_iterator(n, e0.iter().map(|e| e.abs()));
    let mut acc = DVector::zeros(n);
    let mut eps_t = 1.0;
    let mut out = Vec::with_capacity(d_seq.len() + 1);
    out.push((&c * &e0_abs).iter().copied().collect());
    for d in d_seq {
        Error::check_len("theorem_bound (d)", n, d.len())?;
        acc *= cert.epsilon;
        for (a, di) in acc.iter_mut().zip(d) {
            *a += di.abs();
        }
        eps_t *= cert.epsilon;
        let b = &c * (&e0_abs * eps_t + &acc);
        out.push(b.iter().copied().collect());
    }
    Ok(out)
}

/// `C d̄ / (1 − ε)`.
pub fn limit_bound(cert: &ContractionCertificate, d_bar: &[f64]) -> Result<Vec<f64>> {
    cert.require_valid()?;
    Error::check_len("limit_bound", cert.c.len(), d_bar.len())?;
    let d = DVector::from_iterator(d_bar.len(), d_bar.iter().map(|x| x.abs()));
    Ok((cert.c_matrix() * d / (1.0 - cert.epsilon)).iter().copied().collect())
}

/// References that make the mode shift invisible to the error system:
/// `b ± ½ R (p̄(0) − p̄(1))`.
pub fn ideal_mode_references(
    r: &DMatrix<f64>,
    p_bar_0: &[f64],
    p_bar_1: &[f64],
    b: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = r.nrows();
    Error::check_len("ideal_mode_references (p_bar_0)", n, p_bar_0.len())?;
    Error::check_len("ideal_mode_references (p_bar_1)", n, p_bar_1.len())?;
    Error::check_len("ideal_mode_references (b)", n, b.len())?;
    let dp = DVector::from_iterator(n, p_bar_0.iter().zip(p_bar_1).map(|(a, c)| a - c));
    let dv = r * dp;
    let hi = b.iter().zip(dv.iter()).map(|(b, d)| b + 0.5 * d).collect();
    let lo = b.iter().zip(dv.iter()).map(|(b, d)| b - 0.5 * d).collect();
    Ok((hi, lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateExtrema {
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// `(max, min)` per mode, indexed by [`Mode::index`].
    pub per_mode: Option<[(Vec<f64>, Vec<f64>); 2]>,
}

fn column_extrema<'a>(n: usize, rows: impl Iterator<Item = &'a Vec<f64>>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut seen = false;
    for row in rows {
        Error::check_len("measure_extrema (row)", n, row.len())?;
        seen = true;
        for i in 0..n {
            hi[i] = hi[i].max(row[i]);
            lo[i] = lo[i].min(row[i]);
        }
    }
    if !seen {
        return Err(Error::Validation("extrema window is empty".into()));
    }
    Ok((hi, lo))
}

/// Componentwise max/min over the last `window` samples.
pub fn measure_extrema(voltages: &[Vec<f64>], window: usize) -> Result<SteadyStateExtrema> {
    if window == 0 || window > voltages.len() {
        return Err(Error::Validation(format!(
            "extrema window {window} must be in 1..={}",
            voltages.len()
        )));
    }
    let n = voltages[0].len();
    let (v_plus, v_minus) = column_extrema(n, voltages[voltages.len() - window..].iter())?;
    Ok(SteadyStateExtrema {
        v_plus,
        v_minus,
        per_mode: None,
    })
}

/// As [`measure_extrema`], also split by the mode active at each sample.
/// Both modes must occur in the window.
pub fn measure_extrema_by_mode(voltages: &[Vec<f64>], modes: &[Mode], window: usize) -> Result<SteadyStateExtrema> {
    Error::check_len("measure_extrema_by_mode (modes)", voltages.len(), modes.len())?;
    let mut ext = measure_extrema(voltages, window)?;
    let start = voltages.len() - window;
    let n = ext.v_plus.len();
    let pick = |m: Mode| {
        column_extrema(
            n,
            voltages[start..].iter().zip(&modes[start..]).filter(|(_, mm)| **mm == m).map(|(v, _)| v),
        )
    };
    ext.per_mode = Some([pick(Mode::Communication)?, pick(Mode::Computation)?]);
    Ok(ext)
}

/// Bias that centers the steady-state extrema on 1 p.u.
pub fn optimal_bias(extrema: &SteadyStateExtrema, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    Error::check_len("optimal_bias (v_plus)", n, extrema.v_plus.len())?;
    Error::check_len("optimal_bias (v_minus)", n, extrema.v_minus.len())?;
    if let Some(i) = (0..n).find(|&i| extrema.v_minus[i] > extrema.v_plus[i]) {
        return Err(Error::Validation(format!("v_minus exceeds v_plus at index {i}")));
    }
    Ok((0..n)
        .map(|i| b[i] - (0.5 * (extrema.v_plus[i] + extrema.v_minus[i]) - 1.0))
        .collect())
}

/// Reactive setpoint with `R p + X q + 1 = v_ref`.
pub fn equilibrium_q(feeder: &FeederModel, p: &[f64], v_ref: &[f64]) -> Result<Vec<f64>> {
    let n = feeder.n();
    Error::check_len("equilibrium_q (p)", n, p.len())?;
    Error::check_len("equilibrium_q (v_ref)", n, v_ref.len())?;
    let rp = feeder.r() * DVector::from_column_slice(p);
    let rhs = DVector::from_iterator(n, (0..n).map(|i| v_ref[i] - 1.0 - rp[i]));
    let chol = feeder
        .x()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Validation("X is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}
