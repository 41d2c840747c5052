//! Displaced thermal ensembles and alignment-decay statistics.
//!
//! Initial body-frame momenta are drawn from
//! `exp[-(J1²/2I1 + (J2 - J)²/2I2 + J3²/2I3)/k_B T]` with a sharp initial
//! orientation (body axes on the space axes). Sample `i` uses a ChaCha8
//! generator seeded with the master seed and stream `i`, so the sample set
//! does not depend on evaluation order or thread count.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::constants::K_B;
use crate::dynamics::{fmt_f64, integrate_body_momentum, integrate_hard_magnet, IntegratorSettings};
use crate::inertia::InertiaSpec;
use crate::ode::uniform_grid;
use crate::orientation::{Orientation, RotorState};
use crate::pendulum::tau_sym;
use crate::{Error, Result};

/// Minimum ratio `J_drive/√(I_k k_B T)` below which [`ThermalSpec::width_warning`] fires.
pub const WIDTH_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalSpec {
    /// Kelvin.
    pub temperature: f64,
    /// Displacement along `n2`, J·s.
    pub j_drive: f64,
    pub inertia: InertiaSpec,
    pub seed: u64,
    pub n_samples: usize,
}

impl ThermalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !self.j_drive.is_finite() {
            return Err(Error::InvalidParameter("J_drive must be finite".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidParameter(format!("n_samples must be >= 2, got {}", self.n_samples)));
        }
        self.inertia.validate()
    }

    /// Thermal standard deviations `√(I_k k_B T)`.
    pub fn widths(&self) -> [f64; 3] {
        self.inertia.moments().map(|i| (i * K_B * self.temperature).sqrt())
    }

    /// True when the drive does not dominate some thermal width by [`WIDTH_MARGIN`].
    pub fn width_warning(&self) -> bool {
        self.widths().iter().any(|w| self.j_drive.abs() < WIDTH_MARGIN * w)
    }

    /// Gaussian decay time of the `S2 = 0` alignment for this spec.
    pub fn tau_sym(&self) -> Result<f64> {
        tau_sym(self.inertia.transverse(), self.inertia.i3, self.temperature)
    }
}

/// Generator for sample `index`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Body-frame momentum of sample `index`.
pub fn sample_momentum(spec: &ThermalSpec, index: usize) -> Vector3<f64> {
    let mut rng = sample_rng(spec.seed, index);
    let w = spec.widths();
    let mut z = [0.0; 3];
    for v in &mut z {
        *v = StandardNormal.sample(&mut rng);
    }
    Vector3::new(w[0] * z[0], spec.j_drive + w[1] * z[1], w[2] * z[2])
}

/// All initial states, body axes aligned with the space axes.
pub fn sample_initial_states(spec: &ThermalSpec) -> Result<Vec<RotorState>> {
    spec.validate()?;
    Ok((0..spec.n_samples).map(|i| RotorState::new(Orientation::identity(), sample_momentum(spec, i))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentObservable {
    /// `J2/|J|` from the body-frame momentum alone.
    #[default]
    Proxy,
    /// `e2·n2` from the full orientation.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

impl EnsembleSeries {
    /// Mean over samples whose time lies in `[t0, t1]`.
    pub fn window_mean(&self, t0: f64, t1: f64) -> Option<f64> {
        let vals: Vec<f64> =
            self.times.iter().zip(&self.mean).filter(|(t, _)| **t >= t0 && **t <= t1).map(|(_, m)| *m).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// CSV with columns `t,mean_align,stderr,n_samples`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mean_align", "stderr", "n_samples"])?;
        let n = self.n_samples.to_string();
        for ((t, m), s) in self.times.iter().zip(&self.mean).zip(&self.stderr) {
            out.write_record([fmt_f64(*t), fmt_f64(*m), fmt_f64(*s), n.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn sample_alignment(
    spec: &ThermalSpec,
    index: usize,
    s_body: &Vector3<f64>,
    grid: &[f64],
    settings: &IntegratorSettings,
    observable: AlignmentObservable,
) -> Result<Vec<f64>> {
    let j0 = sample_momentum(spec, index);
    let t_span = (grid[0], *grid.last().unwrap());
    match observable {
        AlignmentObservable::Proxy => {
            let series = integrate_body_momentum(&j0, s_body, &spec.inertia, t_span, settings, Some(grid))?;
            Ok(series.alignment_proxy())
        }
        AlignmentObservable::Geometric => {
            let st = RotorState::new(Orientation::identity(), j0);
            let traj = integrate_hard_magnet(&st, s_body, &spec.inertia, t_span, settings)?;
            Ok(traj.observables.iter().map(|o| o.align_geom).collect())
        }
    }
}

/// Monte Carlo mean alignment and its standard error at every sample time of
/// `t_span` (spacing `settings.sample_interval`).
///
/// Samples run in parallel on the current rayon pool; the reduction is done
/// in sample-index order so the result is bit-identical for any thread count.
pub fn ensemble_alignment(
    spec: &ThermalSpec,
    s_body: &Vector3<f64>,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
    observable: AlignmentObservable,
) -> Result<EnsembleSeries> {
    spec.validate()?;
    settings.validate()?;
    if !(t_span.1 > t_span.0) {
        return Err(Error::InvalidParameter("ensemble time span must be increasing".into()));
    }
    let grid = uniform_grid(t_span.0, t_span.1, settings.sample_interval);
    let runs: Vec<Result<Vec<f64>>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| sample_alignment(spec, i, s_body, &grid, settings, observable))
        .collect();

    let m = grid.len();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for (index, run) in runs.into_iter().enumerate() {
        let values = run.map_err(|e| Error::EnsembleSample { index, source: Box::new(e) })?;
        if values.len() != m {
            return Err(Error::EnsembleSample {
                index,
                source: Box::new(Error::InvalidParameter(format!(
                    "sample produced {} points, expected {m}",
                    values.len()
                ))),
            });
        }
        for k in 0..m {
            sum[k] += values[k];
            sum_sq[k] += values[k] * values[k];
        }
    }
    let n = spec.n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = mean
        .iter()
        .zip(&sum_sq)
        .map(|(mu, sq)| {
            let var = ((sq - n * mu * mu) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(EnsembleSeries { times: grid, mean, stderr, n_samples: spec.n_samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Fitted decay time; `f64::INFINITY` when `no_decay` is set.
    #[serde(with = "inf_as_null")]
    pub tau: f64,
    pub r_squared: f64,
    pub no_decay: bool,
    /// Number of points inside the fit window.
    pub n_points: usize,
}

mod inf_as_null {
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

/// Level a series must cross to count as decaying: `exp(-1/2)`, the value of
/// the Gaussian at `t = τ`.
pub const DECAY_LEVEL: f64 = 0.606_530_659_712_633_4;

/// Least-squares fit of `exp(-t²/2τ²)` to `values(times)` over the leading
/// window where `values ≥ 0.2`. Times are measured from `times[0]`.
///
/// Series that never fall below `exp(-1/2)` are flagged as non-decaying.
pub fn fit_gaussian_decay(times: &[f64], values: &[f64]) -> Result<GaussianFit> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::InvalidParameter("fit needs at least 3 (t, value) pairs of equal length".into()));
    }
    if values.iter().all(|v| *v >= DECAY_LEVEL) {
        return Ok(GaussianFit { tau: f64::INFINITY, r_squared: 0.0, no_decay: true, n_points: 0 });
    }
    let t0 = times[0];
    let end = values.iter().position(|v| *v < 0.2).unwrap_or(values.len());
    let t: Vec<f64> = times[..end].iter().map(|x| x - t0).collect();
    let y = &values[..end];
    if end < 3 {
        return Err(Error::InvalidParameter("fewer than 3 points above 0.2 in the fit window".into()));
    }

    // Linearized start, ln y = -a t², then Gauss-Newton on a = 1/(2τ²).
    let (num, den) = t.iter().zip(y).fold((0.0, 0.0), |(n, d), (ti, yi)| {
        let t2 = ti * ti;
        (n - t2 * yi.ln(), d + t2 * t2)
    });
    if !(den > 0.0) {
        return Err(Error::InvalidParameter("degenerate fit window".into()));
    }
    let mut a = (num / den).max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for (ti, yi) in t.iter().zip(y) {
            let t2 = ti * ti;
            let model = (-a * t2).exp();
            let jac = -t2 * model;
            jtj += jac * jac;
            jtr += jac * (yi - model);
        }
        if jtj == 0.0 {
            break;
        }
        let step = jtr / jtj;
        let next = (a + step).max(0.1 * a);
        let done = (next - a).abs() <= 1e-15 * a;
        a = next;
        if done {
            break;
        }
    }
    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    let (ss_res, ss_tot) = t.iter().zip(y).fold((0.0, 0.0), |(r, s), (ti, yi)| {
        let model = (-a * ti * ti).exp();
        (r + (yi - model).powi(2), s + (yi - mean_y).powi(2))
    });
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(GaussianFit { tau: (0.5 / a).sqrt(), r_squared, no_decay: false, n_points: end })
}

/// JSON summary of a decay fit against the `S2 = 0` prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    #[serde(with = "inf_as_null")]
    pub tau_fit: f64,
    pub tau_sym: f64,
    #[serde(with = "inf_as_null")]
    pub ratio: f64,
    pub r_squared: f64,
    pub no_decay: bool,
}

impl DecaySummary {
    pub fn new(fit: &GaussianFit, tau_sym: f64) -> Self {
        Self { tau_fit: fit.tau, tau_sym, ratio: fit.tau / tau_sym, r_squared: fit.r_squared, no_decay: fit.no_decay }
    }
}
