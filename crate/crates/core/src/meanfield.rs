//! Ehrenfest coupling of the rotor to the NV spin.
//!
//! The Euler equations are sourced by the spin expectation `N⟨S⟩` and the spin
//! evolves under the semiclassical Hamiltonian built from the instantaneous
//! classical `J_body`. Both pieces come from
//! `Σ_k (J_k - N⟨S_k⟩)²/2I_k + N D⟨S2²⟩/ħ` (dropping the `⟨S⟩²` term), so the
//! space-fixed total angular momentum is an exact invariant of the coupled
//! equations and its drift only measures integrator error.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::Cell;

use crate::constants::HBAR;
use crate::dynamics::{euler_rhs, fmt_f64, normalize_quaternion, quaternion_rate, realign_orientation};
use crate::inertia::InertiaSpec;
use crate::ode::{self, OdeSystem, SolverOptions};
use crate::orientation::{omega_from_j, Orientation, RotorState};
use crate::spin::{
    expectation_over_hbar, handle_norm, map_spin_error, pack, s2_rate, spin_hamiltonian_over_hbar, unpack, Frame,
    NVConfig, SpinAmplitudes,
};
use crate::{Error, Result};

/// Largest angle between an NV axis and body axis n2 that is still treated as
/// a single collective spin along n2.
pub const COLLINEAR_TOLERANCE: f64 = 1e-3;
/// Averaging window for the resonance scan, seconds.
pub const DEFAULT_AVERAGING_WINDOW: f64 = 150e-6;
/// Angular offset in γ used to seed the flip instability.
pub const DEFAULT_GAMMA_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFieldSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub sample_interval: f64,
    /// Interaction-frame reference rate; `None` picks `J2(0)/I2`.
    pub omega_ref: Option<f64>,
    pub renormalize: bool,
    /// Restore `|J|` and realign the orientation onto the initial
    /// space-fixed momentum after each step.
    pub project_invariants: bool,
}

impl Default for MeanFieldSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            sample_interval: 1e-8,
            omega_ref: None,
            renormalize: true,
            project_invariants: false,
        }
    }
}

impl MeanFieldSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1e-3], got {v}")));
            }
        }
        if !(self.sample_interval > 0.0) || !self.sample_interval.is_finite() {
            return Err(Error::InvalidParameter("sample_interval must be > 0".into()));
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions { rel_tol: self.rel_tol, abs_tol: self.abs_tol, ..Default::default() }
    }
}

/// Number of centers after checking they can be lumped along n2.
pub fn collective_count(nv: &NVConfig) -> Result<usize> {
    nv.validate()?;
    if nv.centers.is_empty() {
        return Err(Error::UnsupportedSpinConfig("no NV centers".into()));
    }
    for (m, c) in nv.centers.iter().enumerate() {
        let a = Vector3::from(c.axis);
        let angle = a.cross(&Vector3::y()).norm().atan2(a.y);
        if angle > COLLINEAR_TOLERANCE {
            return Err(Error::UnsupportedSpinConfig(format!(
                "center {m}: axis is {angle:.3e} rad from n2; resonant multi-axis dynamics needs all axes along n2"
            )));
        }
    }
    Ok(nv.count())
}

struct Coupled<'a> {
    inertia: &'a InertiaSpec,
    moments: [f64; 3],
    n: f64,
    d: f64,
    frame: Frame,
    j_scale: f64,
    renormalize: bool,
    project: Option<(f64, Vector3<f64>)>,
    drift: Cell<f64>,
}

// State layout: q (4), J_body (3), φ re/im pairs (6).
impl OdeSystem<13> for Coupled<'_> {
    fn rhs(&self, t: f64, y: &[f64; 13], dy: &mut [f64; 13]) {
        let j = Vector3::new(y[4], y[5], y[6]);
        let h = spin_hamiltonian_over_hbar(&j, self.moments, self.d);
        let (dphi, psi) = self.frame.rhs(t, &unpack(&y[7..]), &h);
        let s = expectation_over_hbar(&psi) * (HBAR * self.n);
        let w = omega_from_j(&j, &s, self.inertia);
        quaternion_rate(&y[..4], &w, &mut dy[..4]);
        let dj = euler_rhs(&j, &s, self.inertia);
        dy[4] = dj.x;
        dy[5] = dj.y;
        dy[6] = dj.z;
        pack(&dphi, &mut dy[7..]);
    }

    fn abs_scale(&self, i: usize) -> f64 {
        if (4..7).contains(&i) {
            self.j_scale
        } else {
            1.0
        }
    }

    fn after_step(&self, _t: f64, y: &mut [f64; 13]) -> std::result::Result<(), String> {
        normalize_quaternion(&mut y[..4]);
        if let Some((norm, j_space)) = self.project {
            let mut j = Vector3::new(y[4], y[5], y[6]);
            j *= norm / j.norm();
            y[4..7].copy_from_slice(j.as_slice());
            realign_orientation(&mut y[..4], &j, &j_space);
        }
        handle_norm(&mut y[7..], self.renormalize).map_err(|d| {
            self.drift.set(d);
            format!("spin norm drift {d:e}")
        })
    }
}

/// Coupled rotor and spin samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanFieldSeries {
    pub times: Vec<f64>,
    pub j_body: Vec<Vector3<f64>>,
    pub orientation: Vec<Orientation>,
    /// Lab-frame (Schrödinger-picture) amplitudes of one center.
    pub spin: Vec<SpinAmplitudes>,
    pub n_centers: usize,
    pub moments: [f64; 3],
    pub d: f64,
    pub accepted_steps: u64,
    pub max_norm_drift: f64,
}

impl MeanFieldSeries {
    /// `⟨J2⟩/|J|`.
    pub fn j2_over_j(&self) -> Vec<f64> {
        self.j_body.iter().map(|j| j.y / j.norm()).collect()
    }

    /// `⟨S2⟩/ħ` of one center.
    pub fn s2_over_hbar(&self) -> Vec<f64> {
        self.spin.iter().map(|a| expectation_over_hbar(&a.c).y).collect()
    }

    /// Exact `d⟨S2⟩/dt` of one center at each sample, J·s/s.
    pub fn s2_rates(&self) -> Vec<f64> {
        self.spin.iter().zip(&self.j_body).map(|(a, j)| s2_rate(a, j, self.moments, self.d)).collect()
    }

    /// Space-fixed total angular momentum at each sample.
    pub fn j_space(&self) -> Vec<Vector3<f64>> {
        self.orientation.iter().zip(&self.j_body).map(|(q, j)| q.body_to_space(j)).collect()
    }

    /// Largest `|J_space(t) - J_space(0)|/|J_space(0)|`.
    pub fn j_space_drift(&self) -> f64 {
        let js = self.j_space();
        let Some(first) = js.first() else { return 0.0 };
        js.iter().map(|v| (v - first).norm() / first.norm()).fold(0.0, f64::max)
    }

    /// CSV with columns `t,J2_over_J,S2_over_hbar`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "J2_over_J", "S2_over_hbar"])?;
        for ((t, j), s) in self.times.iter().zip(self.j2_over_j()).zip(self.s2_over_hbar()) {
            out.write_record([fmt_f64(*t), fmt_f64(j), fmt_f64(s)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Co-integrates the Euler equations sourced by `N⟨S⟩` with the spin under
/// the instantaneous semiclassical Hamiltonian.
pub fn evolve_meanfield(
    state0: &RotorState,
    psi0: &SpinAmplitudes,
    nv: &NVConfig,
    inertia: &InertiaSpec,
    d: f64,
    t_span: (f64, f64),
    settings: &MeanFieldSettings,
) -> Result<MeanFieldSeries> {
    settings.validate()?;
    inertia.validate()?;
    let n = collective_count(nv)?;
    if (psi0.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("psi0 not normalized (|psi|² = {})", psi0.norm_sqr())));
    }
    if !(t_span.1 > t_span.0) {
        return Err(Error::InvalidParameter("time span must be increasing".into()));
    }
    let j0 = state0.j_body;
    let j_scale = j0.norm();
    if !(j_scale > 0.0) || !j_scale.is_finite() {
        return Err(Error::InvalidParameter("initial angular momentum must be non-zero and finite".into()));
    }
    let moments = inertia.moments();
    let omega_ref = settings.omega_ref.unwrap_or(j0.y / moments[1]);
    let frame = Frame::new(d, omega_ref);
    let sys = Coupled {
        inertia,
        moments,
        n: n as f64,
        d,
        frame,
        j_scale,
        renormalize: settings.renormalize,
        project: settings.project_invariants.then(|| (j_scale, state0.j_space())),
        drift: Cell::new(0.0),
    };
    let mut y0 = [0.0; 13];
    y0[..4].copy_from_slice(&state0.orientation.components());
    y0[4..7].copy_from_slice(j0.as_slice());
    pack(&frame.frame_state(t_span.0, &psi0.c), &mut y0[7..]);

    let grid = ode::uniform_grid(t_span.0, t_span.1, settings.sample_interval);
    let mut out = MeanFieldSeries { n_centers: n, moments, d, ..Default::default() };
    let (_, stats) = ode::integrate(&sys, t_span.0, y0, t_span.1, &settings.solver_options(), &grid, |t, y| {
        let phi = unpack(&y[7..]);
        out.max_norm_drift = out.max_norm_drift.max((phi.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs());
        out.times.push(t);
        out.orientation.push(Orientation::from_components(y[0], y[1], y[2], y[3]));
        out.j_body.push(Vector3::new(y[4], y[5], y[6]));
        out.spin.push(SpinAmplitudes { c: frame.lab_state(t, &phi) });
    })
    .map_err(|e| map_spin_error(e, sys.drift.get()))?;
    out.accepted_steps = stats.accepted;
    Ok(out)
}

/// Trapezoidal average of `values` over `[times[0], times[0] + t0]`; the
/// window end is linearly interpolated.
pub fn time_avg_j2(times: &[f64], values: &[f64], t0: f64) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InvalidParameter("need at least two matching samples".into()));
    }
    if !(t0 > 0.0) {
        return Err(Error::InvalidParameter(format!("averaging window must be > 0, got {t0}")));
    }
    let start = times[0];
    let end = start + t0;
    if *times.last().unwrap() < end * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "series ends at {:e} s, before the averaging window {:e} s",
            times.last().unwrap(),
            end
        )));
    }
    let mut acc = 0.0;
    for k in 1..times.len() {
        let (ta, tb) = (times[k - 1], times[k]);
        if ta >= end {
            break;
        }
        let (va, mut vb) = (values[k - 1], values[k]);
        let mut tb_eff = tb;
        if tb > end {
            vb = va + (vb - va) * (end - ta) / (tb - ta);
            tb_eff = end;
        }
        acc += 0.5 * (va + vb) * (tb_eff - ta);
    }
    Ok(acc / t0)
}

/// Rotor state `J_body = J(sin δ, cos δ, 0)` with identity orientation, i.e.
/// rotation about n2 with γ offset by δ from π/2.
pub fn resonance_initial_state(j: f64, gamma_offset: f64) -> RotorState {
    RotorState::new(Orientation::identity(), Vector3::new(j * gamma_offset.sin(), j * gamma_offset.cos(), 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    #[serde(rename = "J_over_ID")]
    pub j_over_id: f64,
    #[serde(rename = "avgJ2_over_J")]
    pub avg_j2_over_j: f64,
}

/// Runs the mean-field model at each `J/(I2 D)` ratio and reports the time
/// average of `⟨J2⟩/J` over `window`. Ratios run concurrently.
#[allow(clippy::too_many_arguments)]
pub fn resonance_scan(
    ratios: &[f64],
    psi0: &SpinAmplitudes,
    nv: &NVConfig,
    inertia: &InertiaSpec,
    d: f64,
    gamma_offset: f64,
    window: f64,
    settings: &MeanFieldSettings,
) -> Result<Vec<ScanRow>> {
    ratios
        .par_iter()
        .map(|&r| {
            let j = r * inertia.i2 * d;
            let state = resonance_initial_state(j, gamma_offset);
            let series = evolve_meanfield(&state, psi0, nv, inertia, d, (0.0, window), settings)?;
            let avg = time_avg_j2(&series.times, &series.j2_over_j(), window)?;
            Ok(ScanRow { j_over_id: r, avg_j2_over_j: avg })
        })
        .collect()
}

/// CSV with columns `J_over_ID,avgJ2_over_J`.
pub fn write_scan_csv<W: std::io::Write>(rows: &[ScanRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["J_over_ID", "avgJ2_over_J"])?;
    for r in rows {
        out.write_record([fmt_f64(r.j_over_id), fmt_f64(r.avg_j2_over_j)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{DIAMOND_DENSITY, NV_ZERO_FIELD_SPLITTING as D};
    use crate::dynamics::{integrate_body_momentum, IntegratorSettings};
    use crate::inertia::ellipsoid_inertia;

    fn prolate() -> InertiaSpec {
        ellipsoid_inertia(6e-9, 6e-9, 7e-9, DIAMOND_DENSITY, 1e-12).unwrap()
    }

    fn single() -> NVConfig {
        NVConfig::uniform(1, [0.0, 1.0, 0.0], 1)
    }

    fn energy(s: &MeanFieldSeries, k: usize, inertia: &InertiaSpec) -> f64 {
        let j = s.j_body[k];
        let m = inertia.moments();
        let c = &s.spin[k].c;
        let sv = expectation_over_hbar(c) * HBAR * s.n_centers as f64;
        let s2sq = (c[0].norm_sqr() + c[2].norm_sqr()) * HBAR;
        (0..3).map(|i| (j[i] * j[i] / 2.0 - j[i] * sv[i]) / m[i]).sum::<f64>() + s.n_centers as f64 * s.d * s2sq
    }

    #[test]
    fn time_average_examples() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        assert!((time_avg_j2(&t, &[0.7; 11], 1.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((time_avg_j2(&t, &t, 1.0).unwrap() - 0.5).abs() < 1e-15);
        // Window ending between samples: mean of t over [0, 0.55].
        assert!((time_avg_j2(&t, &t, 0.55).unwrap() - 0.275).abs() < 1e-15);
        assert!(time_avg_j2(&t, &t, 2.0).is_err());
        assert!(time_avg_j2(&t[..1], &t[..1], 0.1).is_err());
    }

    #[test]
    fn collinearity_rule() {
        let r = prolate();
        let st = resonance_initial_state(r.i2 * D, 1e-3);
        let tilt = |a: f64| NVConfig::uniform(3, [a.sin(), a.cos(), 0.0], 1);
        assert_eq!(collective_count(&tilt(5e-4)).unwrap(), 3);
        let err = evolve_meanfield(&st, &SpinAmplitudes::plus(), &tilt(2e-3), &r, D, (0.0, 1e-9), &Default::default());
        assert!(matches!(err, Err(Error::UnsupportedSpinConfig(_))));
        assert!(collective_count(&NVConfig::default()).is_err());
    }

    /// Largest deviation of the mean-field J_body from the hard magnet with
    /// S2 = ħ, relative to the initial transverse momentum.
    fn hard_magnet_deviation(ratio: f64) -> f64 {
        let r = prolate();
        let st = resonance_initial_state(ratio * r.i2 * D, 1e-2);
        let t_end = 2e-6;
        let settings = MeanFieldSettings { sample_interval: 2e-8, ..Default::default() };
        let mf = evolve_meanfield(&st, &SpinAmplitudes::plus(), &single(), &r, D, (0.0, t_end), &settings).unwrap();
        for s2 in mf.s2_over_hbar() {
            assert!((s2 - 1.0).abs() < 1e-3, "{s2}");
        }
        let hm = integrate_body_momentum(
            &st.j_body,
            &Vector3::new(0.0, HBAR, 0.0),
            &r,
            (0.0, t_end),
            &IntegratorSettings::default(),
            Some(&mf.times),
        )
        .unwrap();
        let j_perp = st.j_body.x.hypot(st.j_body.z);
        mf.j_body.iter().zip(&hm.j_body).map(|(a, b)| (a - b).norm() / j_perp).fold(0.0, f64::max)
    }

    #[test]
    fn off_resonance_reduces_to_hard_magnet() {
        // The spin's transverse polarization follows the rotation to first
        // order in (J/I)/D; multiplied by the large J2 it shifts the
        // transverse torque at that relative order, so agreement improves
        // linearly as the rotation slows.
        let fast = hard_magnet_deviation(0.1);
        let slow = hard_magnet_deviation(0.025);
        assert!(fast < 0.1, "{fast:e}");
        assert!(slow < fast / 2.0, "{slow:e} vs {fast:e}");
    }

    #[test]
    fn resonant_run_conserves_invariants() {
        let r = prolate();
        let st = resonance_initial_state(r.i2 * D, 1e-2);
        let settings = MeanFieldSettings { sample_interval: 1e-8, ..Default::default() };
        let s = evolve_meanfield(&st, &SpinAmplitudes::plus(), &single(), &r, D, (0.0, 1e-6), &settings).unwrap();
        assert!(s.j_space_drift() < 1e-9, "{:e}", s.j_space_drift());
        let e0 = energy(&s, 0, &r);
        let scale = st.j_body.norm().powi(2) / r.i2;
        for k in 0..s.times.len() {
            assert!((energy(&s, k, &r) - e0).abs() < 1e-9 * scale);
        }
        // Resonance drives population out of |+1⟩ within the window.
        let min_s2 = s.s2_over_hbar().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min_s2 < 0.5);
        let rates = s.s2_rates();
        assert!(rates.iter().any(|v| v.abs() > 1e8 * HBAR));
    }

    #[test]
    fn exact_rate_matches_finite_difference() {
        let r = prolate();
        let st = resonance_initial_state(r.i2 * D, 1e-2);
        let dt = 1e-13;
        let settings = MeanFieldSettings { sample_interval: dt, ..Default::default() };
        let s = evolve_meanfield(&st, &SpinAmplitudes::plus(), &single(), &r, D, (0.0, 1e-8), &settings).unwrap();
        let s2 = s.s2_over_hbar();
        let rates = s.s2_rates();
        let k = s.times.len() / 2;
        let fd = (s2[k + 1] - s2[k - 1]) / (s.times[k + 1] - s.times[k - 1]) * HBAR;
        assert!((fd - rates[k]).abs() <= 1e-4 * rates[k].abs().max(1e4 * HBAR), "{fd:e} vs {:e}", rates[k]);
    }

    #[test]
    fn oblate_minus_one_stays_put_short_run() {
        let r = ellipsoid_inertia(6.81e-9, 6.81e-9, 5.44e-9, DIAMOND_DENSITY, 1e-12).unwrap();
        let st = resonance_initial_state(r.i2 * D, 1e-3);
        let settings = MeanFieldSettings { sample_interval: 1e-8, ..Default::default() };
        let s = evolve_meanfield(&st, &SpinAmplitudes::minus(), &single(), &r, D, (0.0, 2e-6), &settings).unwrap();
        for v in s.s2_over_hbar() {
            assert!((v + 1.0).abs() < 1e-2);
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,J2_over_J,S2_over_hbar\n"));
    }

    #[test]
    fn scan_csv_header() {
        let mut buf = Vec::new();
        write_scan_csv(&[ScanRow { j_over_id: 1.0, avg_j2_over_j: 0.5 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "J_over_ID,avgJ2_over_J\n1e0,5e-1\n");
    }
}
