//! Torque-free rotation of a rigid body carrying a body-fixed spin.
//!
//! The body-frame total angular momentum obeys
//! `dJ_i/dt = (I_j - I_k)/(I_j I_k) J_j J_k - S_k J_j / I_k + S_j J_k / I_j`
//! for cyclic `(i, j, k)`, and the orientation follows `dn_k/dt = ω × n_k`
//! with `ω_k = (J_k - S_k)/I_k`. The state is propagated as a unit quaternion
//! plus `J_body`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::inertia::InertiaSpec;
use crate::ode::{self, OdeSystem, SolverOptions, SolverStats};
use crate::orientation::{momentum_angles, omega_from_j, Orientation, RotorState, GIMBAL_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step, seconds (`null`/absent for none).
    #[serde(with = "optional_inf")]
    pub max_step: f64,
    /// Output sampling interval, seconds.
    pub sample_interval: f64,
    /// Project `J_body` back onto the conserved `|J|` / energy surfaces and
    /// re-align the orientation with the initial space-fixed `J` after every
    /// step.
    pub project_invariants: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            sample_interval: 1e-6,
            project_invariants: true,
        }
    }
}

mod optional_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1e-3], got {v}")));
            }
        }
        if !(self.sample_interval > 0.0) || !self.sample_interval.is_finite() {
            return Err(Error::InvalidParameter(format!("sample_interval must be > 0, got {}", self.sample_interval)));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter(format!("max_step must be > 0, got {}", self.max_step)));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { rel_tol: self.rel_tol, abs_tol: self.abs_tol, max_step: self.max_step, ..Default::default() }
    }

    pub fn with_sample_interval(mut self, dt: f64) -> Self {
        self.sample_interval = dt;
        self
    }

    pub fn with_tolerances(mut self, rel: f64, abs: f64) -> Self {
        self.rel_tol = rel;
        self.abs_tol = abs;
        self
    }
}

/// Right-hand side of the spin-coupled Euler equations (body frame).
pub fn euler_rhs(j: &Vector3<f64>, s: &Vector3<f64>, inertia: &InertiaSpec) -> Vector3<f64> {
    let m = inertia.moments();
    let mut out = Vector3::zeros();
    for i in 0..3 {
        let jj = (i + 1) % 3;
        let k = (i + 2) % 3;
        out[i] = (m[jj] - m[k]) / (m[k] * m[jj]) * j[jj] * j[k] - s[k] * j[jj] / m[k] + s[jj] * j[k] / m[jj];
    }
    out
}

/// Hard-magnet energy `Σ (J_k - S_k)² / 2I_k`.
pub fn hard_magnet_energy(j: &Vector3<f64>, s: &Vector3<f64>, inertia: &InertiaSpec) -> f64 {
    let m = inertia.moments();
    (0..3).map(|k| (j[k] - s[k]).powi(2) / (2.0 * m[k])).sum()
}

/// `q̇ = ½ q ⊗ (0, ω_body)` written out for `[w, x, y, z]`.
#[inline]
pub(crate) fn quaternion_rate(q: &[f64], w: &Vector3<f64>, out: &mut [f64]) {
    let (qw, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    out[0] = 0.5 * (-qx * w.x - qy * w.y - qz * w.z);
    out[1] = 0.5 * (qw * w.x + qy * w.z - qz * w.y);
    out[2] = 0.5 * (qw * w.y + qz * w.x - qx * w.z);
    out[3] = 0.5 * (qw * w.z + qx * w.y - qy * w.x);
}

#[inline]
pub(crate) fn normalize_quaternion(q: &mut [f64]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    for c in q.iter_mut().take(4) {
        *c /= n;
    }
}

/// Conserved quantities of hard-magnet motion, used for the optional
/// manifold projection.
#[derive(Debug, Clone, Copy)]
struct Invariants {
    j_norm_sq: f64,
    energy: f64,
    j_space: Vector3<f64>,
}

/// Projects `j` onto `{|j|² = c1, E(j) = c2}` by a few Newton iterations
/// along the two constraint gradients.
fn project_momentum(j: &mut Vector3<f64>, s: &Vector3<f64>, inertia: &InertiaSpec, inv: &Invariants) {
    let m = inertia.moments();
    for _ in 0..3 {
        let g1 = j.norm_squared() - inv.j_norm_sq;
        let g2 = hard_magnet_energy(j, s, inertia) - inv.energy;
        let d1 = 2.0 * *j;
        let d2 = Vector3::new((j.x - s.x) / m[0], (j.y - s.y) / m[1], (j.z - s.z) / m[2]);
        // Solve [d1·d1 d1·d2; d2·d1 d2·d2] λ = -g, j += λ1 d1 + λ2 d2.
        let (a11, a12, a22) = (d1.dot(&d1), d1.dot(&d2), d2.dot(&d2));
        let det = a11 * a22 - a12 * a12;
        if det.abs() <= 1e-14 * a11 * a22 {
            // Gradients parallel (steady rotation about a principal axis):
            // only the norm constraint is independent.
            let l = -g1 / a11;
            *j += l * d1;
        } else {
            let l1 = (-g1 * a22 + g2 * a12) / det;
            let l2 = (-g2 * a11 + g1 * a12) / det;
            *j += l1 * d1 + l2 * d2;
        }
        if g1.abs() <= 1e-16 * inv.j_norm_sq && g2.abs() <= 1e-16 * inv.energy.abs() {
            break;
        }
    }
}

/// Smallest rotation (applied in the space frame) taking `R(q) j_body` onto
/// the fixed space vector. Built from the half-way quaternion
/// `(1 + a·b, a × b)`, which stays accurate for the tiny corrections applied
/// here (an `acos`-based angle would lose half the digits).
pub(crate) fn realign_orientation(q: &mut [f64], j_body: &Vector3<f64>, j_space: &Vector3<f64>) {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let a = (uq * j_body).normalize();
    let b = j_space.normalize();
    let w = 1.0 + a.dot(&b);
    if w < 1e-6 {
        return;
    }
    let v = a.cross(&b);
    let fix = UnitQuaternion::from_quaternion(Quaternion::new(w, v.x, v.y, v.z));
    let r = (fix * uq).into_inner();
    q[0] = r.w;
    q[1] = r.i;
    q[2] = r.j;
    q[3] = r.k;
}

struct HardMagnet<'a> {
    inertia: &'a InertiaSpec,
    s_body: Vector3<f64>,
    j_scale: f64,
    invariants: Option<Invariants>,
}

impl OdeSystem<7> for HardMagnet<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 7], dy: &mut [f64; 7]) {
        let j = Vector3::new(y[4], y[5], y[6]);
        let w = omega_from_j(&j, &self.s_body, self.inertia);
        quaternion_rate(&y[..4], &w, &mut dy[..4]);
        let dj = euler_rhs(&j, &self.s_body, self.inertia);
        dy[4] = dj.x;
        dy[5] = dj.y;
        dy[6] = dj.z;
    }

    fn abs_scale(&self, i: usize) -> f64 {
        if i < 4 {
            1.0
        } else {
            self.j_scale
        }
    }

    fn after_step(&self, _t: f64, y: &mut [f64; 7]) -> std::result::Result<(), String> {
        normalize_quaternion(&mut y[..4]);
        if let Some(inv) = &self.invariants {
            let mut j = Vector3::new(y[4], y[5], y[6]);
            project_momentum(&mut j, &self.s_body, self.inertia, inv);
            y[4] = j.x;
            y[5] = j.y;
            y[6] = j.z;
            realign_orientation(&mut y[..4], &j, &inv.j_space);
            normalize_quaternion(&mut y[..4]);
        }
        Ok(())
    }
}

struct BodyMomentum<'a> {
    inertia: &'a InertiaSpec,
    s_body: Vector3<f64>,
    j_scale: f64,
    invariants: Option<Invariants>,
}

impl OdeSystem<3> for BodyMomentum<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 3], dy: &mut [f64; 3]) {
        let dj = euler_rhs(&Vector3::new(y[0], y[1], y[2]), &self.s_body, self.inertia);
        dy[0] = dj.x;
        dy[1] = dj.y;
        dy[2] = dj.z;
    }

    fn abs_scale(&self, _i: usize) -> f64 {
        self.j_scale
    }

    fn after_step(&self, _t: f64, y: &mut [f64; 3]) -> std::result::Result<(), String> {
        if let Some(inv) = &self.invariants {
            let mut j = Vector3::new(y[0], y[1], y[2]);
            project_momentum(&mut j, &self.s_body, self.inertia, inv);
            y[0] = j.x;
            y[1] = j.y;
            y[2] = j.z;
        }
        Ok(())
    }
}

/// Per-sample derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// Angle about the symmetry axis, `atan2(J2, -J1)`, unwrapped along the trajectory.
    pub gamma: f64,
    pub sin_gamma: f64,
    /// Angle between `n3` and `J`.
    pub beta: f64,
    /// Geometric alignment `e2·n2`.
    pub align_geom: f64,
    /// Proxy alignment `J2/|J|`.
    pub align_proxy: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrajectoryMeta {
    /// Set when `|S_body| ≥ 0.1 |J_body|`, outside the small-spin regime the
    /// reduced models assume.
    pub large_spin_warning: bool,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub rhs_evals: u64,
}

impl TrajectoryMeta {
    fn from_stats(stats: &SolverStats, large_spin_warning: bool) -> Self {
        Self {
            large_spin_warning,
            accepted_steps: stats.accepted,
            rejected_steps: stats.rejected,
            rhs_evals: stats.rhs_evals,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<RotorState>,
    pub observables: Vec<Observables>,
    pub meta: TrajectoryMeta,
}

pub const TRAJECTORY_CSV_HEADER: [&str; 14] =
    ["t", "q0", "q1", "q2", "q3", "J1", "J2", "J3", "gamma", "singamma", "beta", "align_geom", "align_proxy", "energy"];

/// One row of the trajectory export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub q: [f64; 4],
    pub j_body: [f64; 3],
    pub gamma: f64,
    pub sin_gamma: f64,
    pub beta: f64,
    pub align_geom: f64,
    pub align_proxy: f64,
    pub energy: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&RotorState> {
        self.states.last()
    }

    pub fn records(&self) -> impl Iterator<Item = TrajectoryRecord> + '_ {
        self.times.iter().zip(&self.states).zip(&self.observables).map(|((t, s), o)| TrajectoryRecord {
            t: *t,
            q: s.orientation.components(),
            j_body: s.j_body.into(),
            gamma: o.gamma,
            sin_gamma: o.sin_gamma,
            beta: o.beta,
            align_geom: o.align_geom,
            align_proxy: o.align_proxy,
            energy: o.energy,
        })
    }

    /// CSV with columns `t,q0,q1,q2,q3,J1,J2,J3,gamma,singamma,beta,align_geom,align_proxy,energy`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRAJECTORY_CSV_HEADER)?;
        for r in self.records() {
            let mut row = Vec::with_capacity(14);
            row.push(fmt_f64(r.t));
            row.extend(r.q.iter().map(|v| fmt_f64(*v)));
            row.extend(r.j_body.iter().map(|v| fmt_f64(*v)));
            for v in [r.gamma, r.sin_gamma, r.beta, r.align_geom, r.align_proxy, r.energy] {
                row.push(fmt_f64(v));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// JSON array of [`TrajectoryRecord`]s.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let records: Vec<_> = self.records().collect();
        serde_json::to_writer(w, &records)?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn observe(state: &RotorState, s_body: &Vector3<f64>, inertia: &InertiaSpec, prev_gamma: Option<f64>) -> Observables {
    let (beta, raw_gamma) = momentum_angles(&state.j_body);
    let gamma = match prev_gamma {
        Some(p) => p + wrap_angle(raw_gamma - p),
        None => raw_gamma,
    };
    let jn = state.j_body.norm();
    Observables {
        gamma,
        sin_gamma: raw_gamma.sin(),
        beta,
        align_geom: state.orientation.axis(2).y,
        align_proxy: if jn > 0.0 { state.j_body.y / jn } else { 0.0 },
        energy: hard_magnet_energy(&state.j_body, s_body, inertia),
    }
}

/// Maps an angle onto `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

fn check_span(t_span: (f64, f64)) -> Result<()> {
    if !t_span.0.is_finite() || !t_span.1.is_finite() {
        return Err(Error::InvalidParameter("time span must be finite".into()));
    }
    Ok(())
}

/// Integrates the coupled (quaternion, `J_body`) hard-magnet system over
/// `t_span`, sampling every `settings.sample_interval`.
pub fn integrate_hard_magnet(
    state0: &RotorState,
    s_body: &Vector3<f64>,
    inertia: &InertiaSpec,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    check_span(t_span)?;
    let j0 = state0.j_body;
    let j_scale = j0.norm().max(s_body.norm());
    if j_scale == 0.0 {
        return Err(Error::InvalidParameter("J_body and S_body are both zero".into()));
    }
    let invariants = settings.project_invariants.then(|| Invariants {
        j_norm_sq: j0.norm_squared(),
        energy: hard_magnet_energy(&j0, s_body, inertia),
        j_space: state0.j_space(),
    });
    let sys = HardMagnet { inertia, s_body: *s_body, j_scale, invariants };
    let q = state0.orientation.components();
    let y0 = [q[0], q[1], q[2], q[3], j0.x, j0.y, j0.z];
    let grid = ode::uniform_grid(t_span.0, t_span.1, settings.sample_interval);

    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut observables: Vec<Observables> = Vec::with_capacity(grid.len());
    let (_, stats) = ode::integrate(&sys, t_span.0, y0, t_span.1, &settings.solver_options(), &grid, |t, y| {
        let st = RotorState::new(Orientation::from_components(y[0], y[1], y[2], y[3]), Vector3::new(y[4], y[5], y[6]));
        let prev = observables.last().map(|o| o.gamma);
        observables.push(observe(&st, s_body, inertia, prev));
        times.push(t);
        states.push(st);
    })?;
    let warn = s_body.norm() >= 0.1 * j0.norm();
    Ok(Trajectory { times, states, observables, meta: TrajectoryMeta::from_stats(&stats, warn) })
}

/// Body-frame momentum history without orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSeries {
    pub times: Vec<f64>,
    pub j_body: Vec<Vector3<f64>>,
    pub meta: TrajectoryMeta,
}

impl MomentumSeries {
    /// Proxy alignment `J2/|J|` per sample.
    pub fn alignment_proxy(&self) -> Vec<f64> {
        self.j_body.iter().map(|j| j.y / j.norm()).collect()
    }

    /// `γ = atan2(J2, -J1)`, unwrapped.
    pub fn gamma(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.j_body.len());
        for j in &self.j_body {
            let raw = j.y.atan2(-j.x);
            let g = match out.last() {
                Some(p) => p + wrap_angle(raw - p),
                None => raw,
            };
            out.push(g);
        }
        out
    }
}

/// Integrates only the (closed) Euler equations for `J_body`. The orientation
/// is not needed for the alignment proxy `J2/|J|`, and skipping it removes the
/// fast rotation from the step-size control.
pub fn integrate_body_momentum(
    j0: &Vector3<f64>,
    s_body: &Vector3<f64>,
    inertia: &InertiaSpec,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
    sample_times: Option<&[f64]>,
) -> Result<MomentumSeries> {
    settings.validate()?;
    check_span(t_span)?;
    let j_scale = j0.norm().max(s_body.norm());
    if j_scale == 0.0 {
        return Err(Error::InvalidParameter("J_body and S_body are both zero".into()));
    }
    let invariants = settings.project_invariants.then(|| Invariants {
        j_norm_sq: j0.norm_squared(),
        energy: hard_magnet_energy(j0, s_body, inertia),
        j_space: Vector3::zeros(),
    });
    let sys = BodyMomentum { inertia, s_body: *s_body, j_scale, invariants };
    let owned;
    let grid = match sample_times {
        Some(g) => g,
        None => {
            owned = ode::uniform_grid(t_span.0, t_span.1, settings.sample_interval);
            &owned
        }
    };
    let mut times = Vec::with_capacity(grid.len());
    let mut j_body = Vec::with_capacity(grid.len());
    let (_, stats) =
        ode::integrate(&sys, t_span.0, [j0.x, j0.y, j0.z], t_span.1, &settings.solver_options(), grid, |t, y| {
            times.push(t);
            j_body.push(Vector3::new(y[0], y[1], y[2]));
        })?;
    let warn = s_body.norm() >= 0.1 * j0.norm();
    Ok(MomentumSeries { times, j_body, meta: TrajectoryMeta::from_stats(&stats, warn) })
}

/// Euler-angle rates of a symmetric rotor (`I1 = I2 = I`) with spin along `n2`:
///
/// `α̇ = J/I - S2 sinγ/(I sinβ)`, `β̇ = -(S2/I) cosγ`,
/// `γ̇ = cosβ (I - I3) J/(I I3) + cosβ sinγ S2/(I sinβ)`.
#[allow(clippy::too_many_arguments)]
pub fn euler_angle_rates(
    _alpha: f64,
    beta: f64,
    gamma: f64,
    j: f64,
    s2: f64,
    i: f64,
    i3: f64,
) -> Result<(f64, f64, f64)> {
    let (sb, cb) = beta.sin_cos();
    if sb.abs() < GIMBAL_EPS {
        return Err(Error::CoordinateSingularity { sin_beta: sb });
    }
    let (sg, cg) = gamma.sin_cos();
    let alpha_dot = j / i - s2 * sg / (i * sb);
    let beta_dot = -(s2 / i) * cg;
    let gamma_dot = cb * (i - i3) * j / (i * i3) + cb * sg / sb * s2 / i;
    Ok((alpha_dot, beta_dot, gamma_dot))
}

/// Geometric alignment `e2·n2` per sample.
pub fn alignment(traj: &Trajectory) -> Vec<f64> {
    traj.observables.iter().map(|o| o.align_geom).collect()
}

/// Proxy alignment `J2/|J|` per sample.
pub fn alignment_proxy(traj: &Trajectory) -> Vec<f64> {
    traj.observables.iter().map(|o| o.align_proxy).collect()
}
