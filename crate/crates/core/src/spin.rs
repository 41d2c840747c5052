//! NV-center spin layer.
//!
//! Spin-1 operators are written in the eigenbasis of `S2` ordered
//! `(|+1⟩, |0⟩, |-1⟩)`:
//!
//! ```text
//! S1 = ħ/√2 [[0, -i, 0], [i, 0, -i], [0, i, 0]]
//! S2 = ħ diag(1, 0, -1)
//! S3 = ħ/√2 [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
//! ```
//!
//! With these, `H = -J1 S1/I - J2 S2/I - J3 S3/I3 + D S2²/ħ` has upper
//! off-diagonal entries `iħJ1/(√2 I) - ħJ3/(√2 I3)`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::constants::HBAR;
use crate::dynamics::fmt_f64;
use crate::inertia::InertiaSpec;
use crate::ode::{self, OdeError, OdeSystem, SolverOptions};
use crate::{Error, Result};

/// Largest norm drift that is silently renormalized.
pub const NORM_DRIFT_TOLERANCE: f64 = 1e-6;
/// Tolerance on NV axis normalization.
pub const AXIS_NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvCenter {
    /// Quantization axis in the body frame (unit vector).
    pub axis: [f64; 3],
    /// Eigenvalue of `n·S/ħ`: -1, 0 or +1.
    pub s: i8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NVConfig {
    pub centers: Vec<NvCenter>,
}

impl NVConfig {
    /// `count` identical centers along `axis`, all in state `s`.
    pub fn uniform(count: usize, axis: [f64; 3], s: i8) -> Self {
        Self { centers: vec![NvCenter { axis, s }; count] }
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (m, c) in self.centers.iter().enumerate() {
            let n = Vector3::from(c.axis).norm();
            if !n.is_finite() || (n - 1.0).abs() > AXIS_NORM_TOLERANCE {
                return Err(Error::UnsupportedSpinConfig(format!(
                    "center {m}: axis norm {n} differs from 1 by more than {AXIS_NORM_TOLERANCE:e}"
                )));
            }
            if !(-1..=1).contains(&c.s) {
                return Err(Error::UnsupportedSpinConfig(format!("center {m}: s = {} not in {{-1, 0, 1}}", c.s)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveSpin {
    /// Body-frame spin angular momentum, J·s.
    pub s_body: Vector3<f64>,
}

/// `S̃_k = Σ_m (n^(m)·n_k) ħ s^(m)`.
pub fn rwa_effective_spin(config: &NVConfig) -> Result<EffectiveSpin> {
    config.validate()?;
    let s_body =
        config.centers.iter().fold(Vector3::zeros(), |acc, c| acc + Vector3::from(c.axis) * (HBAR * c.s as f64));
    Ok(EffectiveSpin { s_body })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwaVerdict {
    /// `N ħ margin/min(I_k) < J/I < D/margin`: spins act as a hard magnet.
    HardMagnet,
    /// `J/I ≥ D/margin`: rotation can drive spin transitions.
    Resonant,
    /// Rotation too slow compared with the spin angular momentum.
    InvalidSlow,
}

pub const DEFAULT_RWA_MARGIN: f64 = 10.0;

/// Classifies the rotation rate `J/I` (transverse moment) against the spin
/// scale `N ħ/min(I_k)` and the zero-field splitting `d`.
pub fn rwa_validity(j: f64, inertia: &InertiaSpec, n: usize, margin: f64, d: f64) -> RwaVerdict {
    let rate = j.abs() / inertia.transverse();
    let i_min = inertia.moments().into_iter().fold(f64::INFINITY, f64::min);
    let slow = n as f64 * HBAR / i_min;
    if rate >= d / margin {
        RwaVerdict::Resonant
    } else if rate > slow * margin {
        RwaVerdict::HardMagnet
    } else {
        RwaVerdict::InvalidSlow
    }
}

/// Spin-1 matrices divided by ħ, in the `(|+1⟩, |0⟩, |-1⟩)` basis.
pub fn spin_matrices() -> [Matrix3<Complex64>; 3] {
    let z = Complex64::new(0.0, 0.0);
    let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let i = Complex64::new(0.0, FRAC_1_SQRT_2);
    let one = Complex64::new(1.0, 0.0);
    let s1 = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    let s2 = Matrix3::new(one, z, z, z, z, z, z, z, -one);
    let s3 = Matrix3::new(z, r, z, r, z, r, z, r, z);
    [s1, s2, s3]
}

/// `-Σ_k J_k S_k/I_k + D S2²/ħ`, in units of ħ (rad/s), with per-axis moments.
pub(crate) fn spin_hamiltonian_over_hbar(j: &Vector3<f64>, moments: [f64; 3], d: f64) -> Matrix3<Complex64> {
    let w = [j.x / moments[0], j.y / moments[1], j.z / moments[2]];
    let c = |v: f64| Complex64::new(v, 0.0);
    let off = Complex64::new(-w[2] * FRAC_1_SQRT_2, w[0] * FRAC_1_SQRT_2);
    let z = c(0.0);
    Matrix3::new(c(d - w[1]), off, z, off.conj(), z, off, z, off.conj(), c(d + w[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiclassicalHamiltonian {
    /// Matrix in joules.
    pub matrix: Matrix3<Complex64>,
    /// Set when `I1 ≠ I2` and the transverse mean `(I1 + I2)/2` was used.
    pub approximate: bool,
}

impl SemiclassicalHamiltonian {
    /// Ascending eigenvalues, joules.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let eig = self.matrix.symmetric_eigen();
        let mut v = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
        v.sort_by(f64::total_cmp);
        v
    }
}

/// The 3×3 semiclassical NV Hamiltonian for instantaneous body-frame `J`.
pub fn semiclassical_hamiltonian(j_body: &Vector3<f64>, inertia: &InertiaSpec, d: f64) -> SemiclassicalHamiltonian {
    let i = inertia.transverse();
    let m = spin_hamiltonian_over_hbar(j_body, [i, i, inertia.i3], d);
    SemiclassicalHamiltonian { matrix: m * Complex64::new(HBAR, 0.0), approximate: inertia.i1 != inertia.i2 }
}

/// `(ΔE₊₁, ΔE₋₁) = (ħ(D - J2/I), ħ(D + J2/I))`: gaps of `|±1⟩` above `|0⟩`.
pub fn energy_gaps(j2: f64, i: f64, d: f64) -> (f64, f64) {
    (HBAR * (d - j2 / i), HBAR * (d + j2 / i))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinAmplitudes {
    /// `(c₊₁, c₀, c₋₁)`.
    pub c: [Complex64; 3],
}

impl SpinAmplitudes {
    pub fn new(plus: Complex64, zero: Complex64, minus: Complex64) -> Self {
        Self { c: [plus, zero, minus] }
    }

    pub fn plus() -> Self {
        Self::basis(0)
    }

    pub fn zero() -> Self {
        Self::basis(1)
    }

    pub fn minus() -> Self {
        Self::basis(2)
    }

    /// Eigenstate of `S2` with eigenvalue `s ħ`.
    pub fn from_s(s: i8) -> Result<Self> {
        match s {
            1 => Ok(Self::plus()),
            0 => Ok(Self::zero()),
            -1 => Ok(Self::minus()),
            _ => Err(Error::UnsupportedSpinConfig(format!("s = {s} not in {{-1, 0, 1}}"))),
        }
    }

    fn basis(k: usize) -> Self {
        let mut c = [Complex64::new(0.0, 0.0); 3];
        c[k] = Complex64::new(1.0, 0.0);
        Self { c }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn populations(&self) -> [f64; 3] {
        self.c.map(|z| z.norm_sqr())
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter("spin state has zero or non-finite norm".into()));
        }
        Ok(Self { c: self.c.map(|z| z / n) })
    }

    /// `⟨S⟩`, J·s.
    pub fn expectation(&self) -> Vector3<f64> {
        expectation_over_hbar(&self.c) * HBAR
    }

    pub fn as_vector(&self) -> Vector3<Complex64> {
        Vector3::new(self.c[0], self.c[1], self.c[2])
    }
}

/// `⟨S⟩/ħ` evaluated in closed form.
#[inline]
pub(crate) fn expectation_over_hbar(c: &[Complex64; 3]) -> Vector3<f64> {
    // a = c0* c1 + c1* c2 appears in both transverse components.
    let a = c[0].conj() * c[1] + c[1].conj() * c[2];
    Vector3::new(std::f64::consts::SQRT_2 * a.im, c[0].norm_sqr() - c[2].norm_sqr(), std::f64::consts::SQRT_2 * a.re)
}

/// Exact `d⟨S2⟩/dt = (i/ħ)⟨[H, S2]⟩`, J·s/s, for the per-axis Hamiltonian.
pub fn s2_rate(psi: &SpinAmplitudes, j_body: &Vector3<f64>, moments: [f64; 3], d: f64) -> f64 {
    let h = spin_hamiltonian_over_hbar(j_body, moments, d);
    let v = psi.as_vector();
    let s2 = spin_matrices()[1];
    let comm = h * s2 - s2 * h;
    let val = (v.adjoint() * comm * v)[(0, 0)];
    // (i)(comm expectation) is real.
    -val.im * HBAR
}

/// Settings for spin propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Output sampling interval, seconds.
    pub sample_interval: f64,
    /// Reference rotation rate `ω_ref` of the interaction frame
    /// `H0 = ħ diag(D - ω_ref, 0, D + ω_ref)`; `None` picks `J2(0)/I`.
    pub omega_ref: Option<f64>,
    /// Renormalize drift up to [`NORM_DRIFT_TOLERANCE`] after each step.
    pub renormalize: bool,
}

impl Default for SpinSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-11, abs_tol: 1e-13, sample_interval: 1e-9, omega_ref: None, renormalize: true }
    }
}

impl SpinSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1e-3], got {v}")));
            }
        }
        if !(self.sample_interval > 0.0) || !self.sample_interval.is_finite() {
            return Err(Error::InvalidParameter("sample_interval must be > 0".into()));
        }
        if let Some(w) = self.omega_ref {
            if !w.is_finite() {
                return Err(Error::InvalidParameter("omega_ref must be finite".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn solver_options(&self) -> SolverOptions {
        SolverOptions { rel_tol: self.rel_tol, abs_tol: self.abs_tol, ..Default::default() }
    }
}

/// Interaction-frame phases `(D - ω_ref, D + ω_ref)` applied to `|+1⟩`, `|-1⟩`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    pub w_plus: f64,
    pub w_minus: f64,
}

impl Frame {
    pub fn new(d: f64, omega_ref: f64) -> Self {
        Self { w_plus: d - omega_ref, w_minus: d + omega_ref }
    }

    /// `ψ = U0 φ`.
    #[inline]
    pub fn lab_state(&self, t: f64, phi: &[Complex64; 3]) -> [Complex64; 3] {
        [phi[0] * Complex64::cis(-self.w_plus * t), phi[1], phi[2] * Complex64::cis(-self.w_minus * t)]
    }

    /// `φ = U0† ψ`.
    #[inline]
    pub fn frame_state(&self, t: f64, psi: &[Complex64; 3]) -> [Complex64; 3] {
        [psi[0] * Complex64::cis(self.w_plus * t), psi[1], psi[2] * Complex64::cis(self.w_minus * t)]
    }

    /// `dφ/dt = -i U0† (H - H0) U0 φ`, with `H` in units of ħ; returns also ψ.
    #[inline]
    pub fn rhs(&self, t: f64, phi: &[Complex64; 3], h: &Matrix3<Complex64>) -> ([Complex64; 3], [Complex64; 3]) {
        let (s_p, c_p) = (self.w_plus * t).sin_cos();
        let (s_m, c_m) = (self.w_minus * t).sin_cos();
        let u_p = Complex64::new(c_p, -s_p);
        let u_m = Complex64::new(c_m, -s_m);
        let psi = [phi[0] * u_p, phi[1], phi[2] * u_m];
        let mut hp = [Complex64::new(0.0, 0.0); 3];
        for (r, out) in hp.iter_mut().enumerate() {
            *out = h[(r, 0)] * psi[0] + h[(r, 1)] * psi[1] + h[(r, 2)] * psi[2];
        }
        hp[0] -= psi[0] * self.w_plus;
        hp[2] -= psi[2] * self.w_minus;
        let mi = Complex64::new(0.0, -1.0);
        let dphi = [mi * hp[0] * u_p.conj(), mi * hp[1], mi * hp[2] * u_m.conj()];
        (dphi, psi)
    }
}

#[inline]
pub(crate) fn unpack(y: &[f64]) -> [Complex64; 3] {
    [Complex64::new(y[0], y[1]), Complex64::new(y[2], y[3]), Complex64::new(y[4], y[5])]
}

#[inline]
pub(crate) fn pack(c: &[Complex64; 3], out: &mut [f64]) {
    for k in 0..3 {
        out[2 * k] = c[k].re;
        out[2 * k + 1] = c[k].im;
    }
}

/// Checks and optionally removes norm drift. Returns the drift when it exceeds
/// the tolerance (or any drift when renormalization is off and it is not
/// finite).
#[inline]
pub(crate) fn handle_norm(y: &mut [f64], renormalize: bool) -> std::result::Result<(), f64> {
    let n2: f64 = y[..6].iter().map(|v| v * v).sum();
    let drift = (n2 - 1.0).abs();
    if !drift.is_finite() || drift > NORM_DRIFT_TOLERANCE {
        return Err(drift);
    }
    if renormalize {
        let n = n2.sqrt();
        for v in y[..6].iter_mut() {
            *v /= n;
        }
    }
    Ok(())
}

struct Parametric<'a, F> {
    j_of_t: &'a F,
    moments: [f64; 3],
    d: f64,
    frame: Frame,
    renormalize: bool,
    drift: Cell<f64>,
}

impl<F: Fn(f64) -> Vector3<f64>> OdeSystem<6> for Parametric<'_, F> {
    fn rhs(&self, t: f64, y: &[f64; 6], dy: &mut [f64; 6]) {
        let h = spin_hamiltonian_over_hbar(&(self.j_of_t)(t), self.moments, self.d);
        let (dphi, _) = self.frame.rhs(t, &unpack(y), &h);
        pack(&dphi, dy);
    }

    fn after_step(&self, _t: f64, y: &mut [f64; 6]) -> std::result::Result<(), String> {
        handle_norm(y, self.renormalize).map_err(|d| {
            self.drift.set(d);
            format!("spin norm drift {d:e}")
        })
    }
}

/// Spin amplitudes sampled in time (lab frame).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpinSeries {
    pub times: Vec<f64>,
    pub amplitudes: Vec<SpinAmplitudes>,
    /// Largest `|‖ψ‖² - 1|` seen at the samples before any renormalization.
    pub max_norm_drift: f64,
}

impl SpinSeries {
    /// Unwrapped phase of component `k` across the samples.
    pub fn unwrapped_phase(&self, k: usize) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.amplitudes.len());
        for a in &self.amplitudes {
            let raw = a.c[k].arg();
            let v = match out.last() {
                Some(p) => p + crate::dynamics::wrap_angle(raw - p),
                None => raw,
            };
            out.push(v);
        }
        out
    }

    /// CSV with columns `t,p_plus,p_zero,p_minus,S1_over_hbar,S2_over_hbar,S3_over_hbar`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "p_plus", "p_zero", "p_minus", "S1_over_hbar", "S2_over_hbar", "S3_over_hbar"])?;
        for (t, a) in self.times.iter().zip(&self.amplitudes) {
            let p = a.populations();
            let s = expectation_over_hbar(&a.c);
            out.write_record([
                fmt_f64(*t),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2]),
                fmt_f64(s.x),
                fmt_f64(s.y),
                fmt_f64(s.z),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn map_spin_error(e: OdeError, drift: f64) -> Error {
    match e {
        OdeError::Aborted { t, .. } => Error::NormDrift { t, drift },
        other => other.into(),
    }
}

/// Propagates `iħ ψ̇ = H_semi(J(t)) ψ` for a prescribed body-frame momentum
/// history `j_of_t` (no back-action on the rotor), in the interaction frame
/// of `H0`.
pub fn evolve_spin_parametric<F: Fn(f64) -> Vector3<f64>>(
    psi0: &SpinAmplitudes,
    j_of_t: &F,
    inertia: &InertiaSpec,
    d: f64,
    t_span: (f64, f64),
    settings: &SpinSettings,
) -> Result<SpinSeries> {
    settings.validate()?;
    if (psi0.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("psi0 not normalized (|psi|² = {})", psi0.norm_sqr())));
    }
    let i = inertia.transverse();
    let moments = [i, i, inertia.i3];
    let omega_ref = settings.omega_ref.unwrap_or_else(|| j_of_t(t_span.0).y / i);
    let frame = Frame::new(d, omega_ref);
    let sys = Parametric { j_of_t, moments, d, frame, renormalize: settings.renormalize, drift: Cell::new(0.0) };
    let mut y0 = [0.0; 6];
    pack(&frame.frame_state(t_span.0, &psi0.c), &mut y0);
    let grid = ode::uniform_grid(t_span.0, t_span.1, settings.sample_interval);
    let mut series = SpinSeries::default();
    ode::integrate(&sys, t_span.0, y0, t_span.1, &settings.solver_options(), &grid, |t, y| {
        let phi = unpack(y);
        series.max_norm_drift = series.max_norm_drift.max((phi.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs());
        series.times.push(t);
        series.amplitudes.push(SpinAmplitudes { c: frame.lab_state(t, &phi) });
    })
    .map_err(|e| map_spin_error(e, sys.drift.get()))?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::NV_ZERO_FIELD_SPLITTING as D;
    use crate::inertia::ellipsoid_inertia;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2, TAU};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_rotor() -> InertiaSpec {
        ellipsoid_inertia(6e-9, 6e-9, 7e-9, 3510.0, 1e-12).unwrap()
    }

    #[test]
    fn effective_spin_examples() {
        let one = NVConfig::uniform(1, [0.0, 1.0, 0.0], 1);
        assert_eq!(rwa_effective_spin(&one).unwrap().s_body, Vector3::new(0.0, HBAR, 0.0));
        let many = NVConfig::uniform(800, [0.0, 1.0, 0.0], 1);
        let s = rwa_effective_spin(&many).unwrap().s_body;
        assert!((s.y / HBAR - 800.0).abs() < 1e-9);
        let pair = NVConfig {
            centers: vec![NvCenter { axis: [0.0, 1.0, 0.0], s: 1 }, NvCenter { axis: [0.0, -1.0, 0.0], s: 1 }],
        };
        assert_eq!(rwa_effective_spin(&pair).unwrap().s_body, Vector3::zeros());
        assert!(NVConfig::uniform(1, [0.0, 1.1, 0.0], 1).validate().is_err());
        assert!(NVConfig::uniform(1, [0.0, 1.0, 0.0], 2).validate().is_err());
    }

    #[test]
    fn effective_spin_matches_state_expectation() {
        let axis = Vector3::new(0.3, 0.8, -0.5).normalize();
        for s in [-1i8, 0, 1] {
            let cfg = NVConfig::uniform(1, axis.into(), s);
            let eff = rwa_effective_spin(&cfg).unwrap().s_body;
            // Along its own axis the center is an S2 eigenstate; project per body axis.
            let along = SpinAmplitudes::from_s(s).unwrap().expectation().y;
            assert!((eff - axis * along).norm() < 1e-40);
        }
    }

    #[test]
    fn rwa_examples() {
        let r = ellipsoid_inertia(10e-9, 10e-9, 11e-9, 3510.0, 1e-12).unwrap();
        let j = r.i2 * TAU * 23.7e6;
        assert_eq!(rwa_validity(j, &r, 1, DEFAULT_RWA_MARGIN, D), RwaVerdict::HardMagnet);
        assert_eq!(rwa_validity(r.i1 * D, &r, 1, DEFAULT_RWA_MARGIN, D), RwaVerdict::Resonant);
        assert_eq!(rwa_validity(0.5 * HBAR, &r, 1, DEFAULT_RWA_MARGIN, D), RwaVerdict::InvalidSlow);
    }

    #[test]
    fn spin_matrices_obey_commutation_relations() {
        let [s1, s2, s3] = spin_matrices();
        let i = c(0.0, 1.0);
        assert!(((s1 * s2 - s2 * s1) - s3 * i).norm() < 1e-15);
        assert!(((s2 * s3 - s3 * s2) - s1 * i).norm() < 1e-15);
        assert!(((s3 * s1 - s1 * s3) - s2 * i).norm() < 1e-15);
        let casimir = s1 * s1 + s2 * s2 + s3 * s3;
        assert!((casimir - Matrix3::identity() * c(2.0, 0.0)).norm() < 1e-15);
    }

    /// Entries exactly as printed, with ħ = 1 units factored back in.
    fn printed(j: &Vector3<f64>, i: f64, i3: f64, d: f64) -> Matrix3<Complex64> {
        let h = HBAR;
        let r = FRAC_1_SQRT_2;
        let up = c(-r * h / i3 * j.z, r * h / i * j.x);
        let lo = c(-r * h / i3 * j.z, -r * h / i * j.x);
        Matrix3::new(
            c(d * h - h / i * j.y, 0.0),
            up,
            c(0.0, 0.0),
            lo,
            c(0.0, 0.0),
            up,
            c(0.0, 0.0),
            lo,
            c(d * h + h / i * j.y, 0.0),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn matrix_matches_printed_form(
            jx in -2.0f64..2.0, jy in -2.0f64..2.0, jz in -2.0f64..2.0
        ) {
            let r = small_rotor();
            let scale = r.i1 * D;
            let j = Vector3::new(jx, jy, jz) * scale;
            let h = semiclassical_hamiltonian(&j, &r, D);
            let p = printed(&j, r.i1, r.i3, D);
            let norm = p.norm();
            for k in 0..9 {
                prop_assert!((h.matrix[k] - p[k]).norm() <= 1e-14 * norm);
            }
            prop_assert!((h.matrix - h.matrix.adjoint()).norm() == 0.0);
            prop_assert!(!h.approximate);
        }
    }

    #[test]
    fn diagonal_and_resonant_examples() {
        let r = small_rotor();
        let j = 0.3 * r.i1 * D;
        let h = semiclassical_hamiltonian(&Vector3::new(0.0, j, 0.0), &r, D).matrix;
        assert!((h[(0, 0)].re - HBAR * (D - j / r.i1)).abs() < 1e-12 * HBAR * D);
        assert!((h[(2, 2)].re - HBAR * (D + j / r.i1)).abs() < 1e-12 * HBAR * D);
        assert_eq!(h[(0, 1)], c(0.0, 0.0));
        let res = semiclassical_hamiltonian(&Vector3::new(0.0, r.i1 * D, 0.0), &r, D).matrix;
        assert!(res[(0, 0)].norm() < 1e-12 * HBAR * D);
        assert_eq!(res[(0, 2)], c(0.0, 0.0));
        let near = InertiaSpec::new(r.i1, r.i1 * 0.999, r.i3, 0.01).unwrap();
        assert!(semiclassical_hamiltonian(&Vector3::new(0.0, j, 0.0), &near, D).approximate);
    }

    /// Real roots of the characteristic cubic of a Hermitian 3×3, by the
    /// trigonometric formula followed by Newton polishing.
    fn cubic_eigenvalues(h: &Matrix3<Complex64>) -> [f64; 3] {
        let a = |r: usize, c: usize| h[(r, c)];
        let tr = (a(0, 0) + a(1, 1) + a(2, 2)).re;
        let m2 = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) + a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0) + a(1, 1) * a(2, 2)
            - a(1, 2) * a(2, 1))
        .re;
        let det = (a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
            - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)))
        .re;
        // λ³ - tr λ² + m2 λ - det = 0, shifted λ = x + tr/3.
        let q = tr / 3.0;
        let p = (tr * tr - 3.0 * m2) / 9.0;
        let r = (2.0 * tr.powi(3) - 9.0 * tr * m2 + 27.0 * det) / 54.0;
        let mut out = if p <= 0.0 {
            [q; 3]
        } else {
            let th = (r / p.powf(1.5)).clamp(-1.0, 1.0).acos();
            let s = 2.0 * p.sqrt();
            [0.0, 1.0, 2.0].map(|k: f64| s * ((th - k * TAU) / 3.0).cos() + q)
        };
        for l in out.iter_mut() {
            for _ in 0..3 {
                let f = ((*l - tr) * *l + m2) * *l - det;
                let df = (3.0 * *l - 2.0 * tr) * *l + m2;
                if df.abs() > 1e-6 {
                    *l -= f / df;
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn eigenvalues_match_cubic_oracle(
            jx in -2.0f64..2.0, jy in -2.0f64..2.0, jz in -2.0f64..2.0
        ) {
            let r = small_rotor();
            let j = Vector3::new(jx, jy, jz) * (r.i1 * D);
            let h = semiclassical_hamiltonian(&j, &r, D);
            // Work in units of ħD so the cubic is well scaled.
            let scaled = h.matrix / Complex64::new(HBAR * D, 0.0);
            let oracle = cubic_eigenvalues(&scaled);
            let got = h.eigenvalues().map(|e| e / (HBAR * D));
            for k in 0..3 {
                prop_assert!((got[k] - oracle[k]).abs() <= 1e-12 * (1.0 + oracle[k].abs()), "{got:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn oblate_minus_one_level_stays_detuned() {
        let r = ellipsoid_inertia(6.81e-9, 6.81e-9, 5.44e-9, crate::constants::DIAMOND_DENSITY, 1e-12).unwrap();
        let id = r.i1 * D;
        for k in 0..=240 {
            let j2 = 1.2 * id * k as f64 / 240.0;
            for tilt in [0.0, 1e-3, 1e-2] {
                let j = Vector3::new(tilt * j2, j2, 0.5 * tilt * j2);
                let h = semiclassical_hamiltonian(&j, &r, D).matrix;
                let e = h.symmetric_eigen();
                let pick = |basis: usize| {
                    (0..3)
                        .max_by(|a, b| {
                            e.eigenvectors[(basis, *a)].norm().total_cmp(&e.eigenvectors[(basis, *b)].norm())
                        })
                        .unwrap()
                };
                let (occ, zero) = (pick(2), pick(1));
                assert_ne!(occ, zero);
                let gap = (e.eigenvalues[occ] - e.eigenvalues[zero]).abs();
                assert!(gap >= 0.5 * HBAR * D, "j2/ID={} gap/ħD={}", j2 / id, gap / (HBAR * D));
            }
        }
    }

    #[test]
    fn gap_examples() {
        let i = 2e-37;
        assert_eq!(energy_gaps(i * D, i, D).0, 0.0);
        let (a, b) = energy_gaps(0.0, i, D);
        assert_eq!(a, HBAR * D);
        assert_eq!(b, HBAR * D);
        assert!((energy_gaps(i * D, i, D).1 - 2.0 * HBAR * D).abs() < 1e-12 * HBAR * D);
    }

    #[test]
    fn expectation_closed_form_matches_matrices() {
        let psi = SpinAmplitudes::new(c(0.3, 0.1), c(-0.2, 0.7), c(0.4, -0.35)).normalized().unwrap();
        let v = psi.as_vector();
        let mats = spin_matrices();
        let e = psi.expectation() / HBAR;
        for k in 0..3 {
            let m = (v.adjoint() * mats[k] * v)[(0, 0)];
            assert!(m.im.abs() < 1e-15);
            assert!((m.re - e[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_state_phase() {
        let r = small_rotor();
        let j = 0.4 * r.i1 * D;
        let period = TAU / D;
        let settings = SpinSettings { omega_ref: Some(0.0), sample_interval: period / 8.0, ..Default::default() };
        let s = evolve_spin_parametric(
            &SpinAmplitudes::plus(),
            &|_| Vector3::new(0.0, j, 0.0),
            &r,
            D,
            (0.0, 100.0 * period),
            &settings,
        )
        .unwrap();
        let phase = s.unwrapped_phase(0);
        for ((t, a), ph) in s.times.iter().zip(&s.amplitudes).zip(&phase) {
            assert!((a.populations()[0] - 1.0).abs() < 1e-12);
            let expected = -(D - j / r.i1) * t;
            assert!((ph - expected).abs() <= 1e-8 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn no_direct_plus_minus_coupling() {
        // Starting in |+1⟩, population of |-1⟩ must grow as t⁴ at short times
        // (second order through |0⟩), not t².
        let r = small_rotor();
        let j = Vector3::new(0.2, 0.1, 0.15) * (r.i1 * D);
        let settings = SpinSettings { rel_tol: 1e-12, abs_tol: 1e-14, sample_interval: 1.0, ..Default::default() };
        let p_minus = |t: f64| {
            let s = evolve_spin_parametric(&SpinAmplitudes::plus(), &|_| j, &r, D, (0.0, t), &settings).unwrap();
            s.amplitudes.last().unwrap().populations()[2]
        };
        let t = 1e-3 / D;
        let ratio = p_minus(2.0 * t) / p_minus(t);
        assert!((ratio - 16.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn unitarity_without_renormalization() {
        let r = small_rotor();
        let period = TAU / D;
        let settings = SpinSettings { renormalize: false, sample_interval: 100.0 * period, ..Default::default() };
        let jt = |t: f64| Vector3::new(0.3 * (D * 0.01 * t).cos(), 0.9, 0.2) * (r.i1 * D);
        let s = evolve_spin_parametric(&SpinAmplitudes::plus(), &jt, &r, D, (0.0, 1e3 * period), &settings).unwrap();
        assert!(s.max_norm_drift <= 1e-9, "{:e}", s.max_norm_drift);
    }

    #[test]
    fn adiabatic_following_off_resonance() {
        let r = small_rotor();
        let i = r.i1;
        let t_end = 2000.0 / D;
        let jt = |t: f64| Vector3::new(0.05, 0.1 + 0.3 * t / t_end, 0.0) * (i * D);
        let settings = SpinSettings { sample_interval: t_end / 20.0, ..Default::default() };
        // Start in the instantaneous eigenvector continuously connected to |+1⟩.
        let inst = |t: f64| {
            let h = semiclassical_hamiltonian(&jt(t), &r, D).matrix;
            let e = h.symmetric_eigen();
            let k = (0..3)
                .max_by(|a, b| e.eigenvectors[(0, *a)].norm().total_cmp(&e.eigenvectors[(0, *b)].norm()))
                .unwrap();
            e.eigenvectors.column(k).into_owned()
        };
        let v0 = inst(0.0);
        let psi0 = SpinAmplitudes::new(v0[0], v0[1], v0[2]).normalized().unwrap();
        let s = evolve_spin_parametric(&psi0, &jt, &r, D, (0.0, t_end), &settings).unwrap();
        for (t, a) in s.times.iter().zip(&s.amplitudes) {
            let overlap = (inst(*t).adjoint() * a.as_vector())[(0, 0)].norm_sqr();
            assert!(overlap >= 0.99, "t={t:e} overlap {overlap}");
        }
    }

    #[test]
    fn landau_zener_transfer() {
        let r = small_rotor();
        let i = r.i1;
        let g = 2e-3 * D;
        let j1 = SQRT_2 * i * g;
        let run = |rate: f64| {
            let span = 40.0 * g / rate;
            let jt = move |t: f64| Vector3::new(j1, i * (D + rate * t), 0.0);
            let settings = SpinSettings { sample_interval: span, omega_ref: Some(D), ..Default::default() };
            let s = evolve_spin_parametric(&SpinAmplitudes::plus(), &jt, &r, D, (-span, span), &settings).unwrap();
            let p = s.amplitudes.last().unwrap().populations()[1];
            (p, 1.0 - (-2.0 * PI * g * g / rate).exp())
        };
        let (slow, slow_lz) = run(2.0 * PI * g * g / 1.5);
        let (fast, fast_lz) = run(2.0 * PI * g * g / 0.3);
        assert!(slow > fast);
        assert!((slow - slow_lz).abs() < 0.02, "{slow} vs {slow_lz}");
        assert!((fast - fast_lz).abs() < 0.02, "{fast} vs {fast_lz}");
    }

    #[test]
    fn norm_drift_is_an_error() {
        let mut y = [1.0 + 1e-5, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(handle_norm(&mut y, true).is_err());
        let mut y = [1.0 + 1e-8, 0.0, 0.0, 0.0, 0.0, 0.0];
        handle_norm(&mut y, true).unwrap();
        assert_eq!(y[0], 1.0);
        assert!(evolve_spin_parametric(
            &SpinAmplitudes::new(c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
            &|_| Vector3::zeros(),
            &small_rotor(),
            D,
            (0.0, 1e-9),
            &SpinSettings::default()
        )
        .is_err());
    }
}
