//! Reduced one-dimensional description of rotations about the symmetry axis.
//!
//! For rapid rotation about `n2` with `β ≈ π/2`, the angle `γ` about the
//! symmetry axis behaves as a pendulum,
//!
//! `H = p_γ²/(2 I_eff) + V(γ)`, `V(γ) = -(S2 J/I2) sinγ + (I1 - I2) J² sin²γ/(2 I1 I2)`,
//!
//! with `I_eff = I1 I3/(I1 - I3)` (equal to `I I3/(I - I3)` when `I1 = I2 = I`).
//! This normalization reproduces the near-symmetric equation of motion
//! `γ̈ = -(I1-I2)(I1-I3) J² sinγ cosγ/(I1² I2 I3) + (I1-I3) J S2 cosγ/(I1 I2 I3)`
//! term by term.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use crate::constants::K_B;
use crate::dynamics::{fmt_f64, IntegratorSettings};
use crate::inertia::InertiaSpec;
use crate::ode::{self, OdeSystem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// Spin projection on `n2`, J·s (signed).
    pub s2: f64,
    /// Total angular momentum magnitude, J·s.
    pub j: f64,
}

impl PendulumParams {
    /// Symmetric rotor, `I1 = I2 = i`.
    pub fn symmetric(i: f64, i3: f64, s2: f64, j: f64) -> Result<Self> {
        Self::near_symmetric(i, i, i3, s2, j)
    }

    pub fn near_symmetric(i1: f64, i2: f64, i3: f64, s2: f64, j: f64) -> Result<Self> {
        let p = Self { i1, i2, i3, s2, j };
        p.validate()?;
        Ok(p)
    }

    pub fn from_inertia(inertia: &InertiaSpec, s2: f64, j: f64) -> Result<Self> {
        Self::near_symmetric(inertia.i1, inertia.i2, inertia.i3, s2, j)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("I1", self.i1), ("I2", self.i2), ("I3", self.i3)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInertia(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !self.s2.is_finite() {
            return Err(Error::InvalidParameter("S2 must be finite".into()));
        }
        if !(self.j > 0.0) || !self.j.is_finite() {
            return Err(Error::InvalidParameter(format!("J must be finite and > 0, got {}", self.j)));
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.i1 == self.i2
    }

    /// Signed effective moment `I1 I3/(I1 - I3)`; positive for prolate rotors.
    pub fn i_eff(&self) -> Result<f64> {
        effective_inertia(self.i1, self.i3)
    }

    pub fn with_s2(mut self, s2: f64) -> Self {
        self.s2 = s2;
        self
    }
}

/// `I I3/(I - I3)`.
pub fn effective_inertia(i: f64, i3: f64) -> Result<f64> {
    if i == i3 {
        return Err(Error::UndefinedEffectiveInertia);
    }
    Ok(i * i3 / (i - i3))
}

/// `V(γ)`; the asymmetric term vanishes for `I1 = I2`.
pub fn effective_potential(gamma: f64, params: &PendulumParams) -> f64 {
    let s = gamma.sin();
    -(params.s2 * params.j / params.i2) * s
        + (params.i1 - params.i2) * params.j * params.j * s * s / (2.0 * params.i1 * params.i2)
}

/// `dV/dγ`.
pub fn effective_potential_slope(gamma: f64, params: &PendulumParams) -> f64 {
    let (s, c) = gamma.sin_cos();
    -(params.s2 * params.j / params.i2) * c
        + (params.i1 - params.i2) * params.j * params.j * s * c / (params.i1 * params.i2)
}

/// `d²V/dγ²`.
pub fn effective_potential_curvature(gamma: f64, params: &PendulumParams) -> f64 {
    (params.s2 * params.j / params.i2) * gamma.sin()
        + (params.i1 - params.i2) * params.j * params.j * (2.0 * gamma).cos() / (params.i1 * params.i2)
}

/// `p_γ²/(2 I_eff) + V(γ)`.
pub fn h_eff_energy(p_gamma: f64, gamma: f64, params: &PendulumParams) -> Result<f64> {
    Ok(p_gamma * p_gamma / (2.0 * params.i_eff()?) + effective_potential(gamma, params))
}

/// Angular frequency of small oscillations about `γ = π/2`, `√(V''(π/2)/I_eff)`.
/// `None` when `π/2` is not a minimum of `H` (unstable or marginal).
pub fn small_oscillation_frequency(params: &PendulumParams) -> Result<Option<f64>> {
    let w2 = effective_potential_curvature(FRAC_PI_2, params) / params.i_eff()?;
    Ok((w2 > 0.0).then(|| w2.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PendulumTrajectory {
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub p_gamma: Vec<f64>,
}

impl PendulumTrajectory {
    pub fn energies(&self, params: &PendulumParams) -> Result<Vec<f64>> {
        self.gamma.iter().zip(&self.p_gamma).map(|(g, p)| h_eff_energy(*p, *g, params)).collect()
    }

    /// Minimum of `sinγ`, refined at the turning points (`p_γ` sign changes)
    /// by cubic Hermite interpolation between samples.
    pub fn min_sin_gamma(&self, params: &PendulumParams) -> Result<f64> {
        let k = params.i_eff()?;
        let mut best = self.gamma.iter().map(|g| g.sin()).fold(f64::INFINITY, f64::min);
        for w in 0..self.times.len().saturating_sub(1) {
            let (p0, p1) = (self.p_gamma[w], self.p_gamma[w + 1]);
            if p0 == 0.0 || p0.signum() == p1.signum() {
                continue;
            }
            let h = self.times[w + 1] - self.times[w];
            let (g0, g1) = (self.gamma[w], self.gamma[w + 1]);
            let (dp0, dp1) = (-effective_potential_slope(g0, params), -effective_potential_slope(g1, params));
            // Root of the Hermite cubic for p on [0, 1] by bisection.
            let pc = |s: f64| hermite(s, h, p0, p1, dp0, dp1);
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if pc(mid).signum() == p0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            let g = hermite(s, h, g0, g1, p0 / k, p1 / k);
            best = best.min(g.sin());
        }
        Ok(best)
    }

    /// CSV with columns `t,gamma,p_gamma,singamma`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "gamma", "p_gamma", "singamma"])?;
        for ((t, g), p) in self.times.iter().zip(&self.gamma).zip(&self.p_gamma) {
            out.write_record([fmt_f64(*t), fmt_f64(*g), fmt_f64(*p), fmt_f64(g.sin())])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn hermite(s: f64, h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
}

struct Pendulum<'a> {
    params: &'a PendulumParams,
    k: f64,
    p_scale: f64,
    energy: Option<f64>,
}

impl OdeSystem<2> for Pendulum<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 2], dy: &mut [f64; 2]) {
        dy[0] = y[1] / self.k;
        dy[1] = -effective_potential_slope(y[0], self.params);
    }

    fn abs_scale(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.p_scale
        }
    }

    fn after_step(&self, _t: f64, y: &mut [f64; 2]) -> std::result::Result<(), String> {
        // One Newton step along ∇H back onto the initial energy level.
        if let Some(e0) = self.energy {
            let h = y[1] * y[1] / (2.0 * self.k) + effective_potential(y[0], self.params);
            let gg = effective_potential_slope(y[0], self.params);
            let gp = y[1] / self.k;
            let n2 = gg * gg + gp * gp;
            if n2 > 0.0 {
                let l = (h - e0) / n2;
                y[0] -= l * gg;
                y[1] -= l * gp;
            }
        }
        Ok(())
    }
}

/// Integrates `γ̇ = p_γ/I_eff`, `ṗ_γ = -V'(γ)` over `t_span`.
///
/// With `settings.project_invariants` the state is pulled back onto the
/// initial energy level after each step.
pub fn integrate_pendulum(
    gamma0: f64,
    p0: f64,
    params: &PendulumParams,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<PendulumTrajectory> {
    params.validate()?;
    settings.validate()?;
    let k = params.i_eff()?;
    if !gamma0.is_finite() || !p0.is_finite() {
        return Err(Error::InvalidParameter("initial (gamma, p) must be finite".into()));
    }
    // Characteristic momentum: the larger of p0 and the potential-depth scale.
    let depth = (params.s2 * params.j / params.i2).abs()
        + ((params.i1 - params.i2) * params.j * params.j / (params.i1 * params.i2)).abs();
    let p_scale = p0.abs().max((k.abs() * depth).sqrt()).max(f64::MIN_POSITIVE);
    let energy = settings.project_invariants.then(|| p0 * p0 / (2.0 * k) + effective_potential(gamma0, params));
    let sys = Pendulum { params, k, p_scale, energy };
    let grid = ode::uniform_grid(t_span.0, t_span.1, settings.sample_interval);
    let mut traj = PendulumTrajectory {
        times: Vec::with_capacity(grid.len()),
        gamma: Vec::with_capacity(grid.len()),
        p_gamma: Vec::with_capacity(grid.len()),
    };
    ode::integrate(&sys, t_span.0, [gamma0, p0], t_span.1, &settings.solver_options(), &grid, |t, y| {
        traj.times.push(t);
        traj.gamma.push(y[0]);
        traj.p_gamma.push(y[1]);
    })?;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    /// `sinγ_min` clamped to `[-1, 1]`.
    pub sin_gamma_min: f64,
    /// Unclamped `1 - I p0²/(2 I_eff S2 J)`; below `-1` the pendulum circulates.
    pub raw: f64,
    pub trapped: bool,
}

/// Lowest `sinγ` reached from `γ0 = π/2` with momentum `p0`, from energy
/// conservation of the symmetric pendulum: `1 - I p0²/(2 I_eff S2 J)`.
///
/// A potential that does not confine around `π/2` (`S2 I_eff ≤ 0`) is
/// reported as untrapped.
pub fn turning_point_singamma(p0: f64, params: &PendulumParams) -> Result<TurningPoint> {
    params.validate()?;
    let k = params.i_eff()?;
    if params.s2 * k <= 0.0 {
        return Ok(TurningPoint { sin_gamma_min: -1.0, raw: f64::NEG_INFINITY, trapped: false });
    }
    let raw = 1.0 - params.i2 * p0 * p0 / (2.0 * k * params.s2 * params.j);
    Ok(TurningPoint { sin_gamma_min: raw.clamp(-1.0, 1.0), raw, trapped: raw > -1.0 })
}

/// Spin needed to keep `sinγ ≥ 4/5`: `(5/2)(I/I3 - 1) p0²/J`.
pub fn threshold_sym(p0: f64, i: f64, i3: f64, j: f64) -> f64 {
    2.5 * (i / i3 - 1.0) * p0 * p0 / j
}

/// Spin that turns `γ = π/2` into a minimum of the near-prolate potential: `(I1 - I2) J/I1`.
pub fn threshold_asym(i1: f64, i2: f64, j: f64) -> f64 {
    (i1 - i2) * j / i1
}

/// Temperature scale below which the thermal spread of `p_γ` stays trapped:
/// `S2 J/(k_B (I - I3))`.
pub fn thermal_bound(s2: f64, j: f64, i: f64, i3: f64) -> f64 {
    s2 * j / (K_B * (i - i3))
}

/// Gaussian decay time of the alignment for `S2 = 0`: `|I_eff|/√(I3 k_B T)`.
pub fn tau_sym(i: f64, i3: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(effective_inertia(i, i3)?.abs() / (i3 * K_B * temperature).sqrt())
}

/// Prolate/oblate duality: keeps `I1` and `J`, flips `S2`, and picks
/// `I2' = 2 I1 - I2`, `I3' = I1/(1 - r I2')` with `r = (I1 - I3)/(I2 I3)` so
/// the `γ` equation of motion is unchanged. In the symmetric case this is
/// `I_eff → -I_eff`, `S2 → -S2`. The map is an involution.
///
/// Momenta transform as `p' = (I_eff'/I_eff) p` (see [`duality_momentum_factor`]).
pub fn oblate_duality_map(params: &PendulumParams) -> Result<PendulumParams> {
    params.validate()?;
    if params.i1 == params.i3 {
        return Err(Error::UndefinedEffectiveInertia);
    }
    let i1 = params.i1;
    let r = (i1 - params.i3) / (params.i2 * params.i3);
    let i2 = if params.is_symmetric() { i1 } else { 2.0 * i1 - params.i2 };
    let denom = 1.0 - r * i2;
    if !(i2 > 0.0) || !(denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "no positive dual inertia for (I1, I2, I3) = ({:e}, {:e}, {:e})",
            params.i1, params.i2, params.i3
        )));
    }
    let i3 = i1 / denom;
    PendulumParams::near_symmetric(i1, i2, i3, -params.s2, params.j)
}

/// `I_eff'/I_eff` for the dual parameters.
pub fn duality_momentum_factor(params: &PendulumParams) -> Result<f64> {
    let dual = oblate_duality_map(params)?;
    Ok(dual.i_eff()? / params.i_eff()?)
}

/// One row of a trapping sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s2_over_threshold: f64,
    pub singamma_min_predicted: f64,
    pub singamma_min_measured: f64,
    pub trapped: bool,
}

/// For each ratio `S2/threshold_sym`, integrates the pendulum from
/// `(π/2, p0)` over `horizon` and compares the lowest `sinγ` reached with the
/// closed form.
pub fn trapping_sweep(
    p0: f64,
    base: &PendulumParams,
    ratios: &[f64],
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<SweepRow>> {
    let thr = threshold_sym(p0, base.i1, base.i3, base.j);
    ratios
        .iter()
        .map(|&ratio| {
            let params = base.with_s2(ratio * thr);
            let tp = turning_point_singamma(p0, &params)?;
            let traj = integrate_pendulum(FRAC_PI_2, p0, &params, (0.0, horizon), settings)?;
            Ok(SweepRow {
                s2_over_threshold: ratio,
                singamma_min_predicted: tp.sin_gamma_min,
                singamma_min_measured: traj.min_sin_gamma(&params)?,
                trapped: tp.trapped,
            })
        })
        .collect()
}

/// CSV with columns `S2_over_threshold,singamma_min_predicted,singamma_min_measured,trapped_flag`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["S2_over_threshold", "singamma_min_predicted", "singamma_min_measured", "trapped_flag"])?;
    for r in rows {
        out.write_record([
            fmt_f64(r.s2_over_threshold),
            fmt_f64(r.singamma_min_predicted),
            fmt_f64(r.singamma_min_measured),
            (r.trapped as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
