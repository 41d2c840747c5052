//! The five scenario families.

use anyhow::Context;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use spinrotor_core::dynamics::fmt_f64;
use spinrotor_core::meanfield::write_scan_csv;
use spinrotor_core::pendulum::small_oscillation_frequency;
use spinrotor_core::thermal::DecaySummary;
use spinrotor_core::{
    body_angmom_from_euler, ensemble_alignment, euler_to_orientation, evolve_meanfield, fit_gaussian_decay,
    hard_magnet_energy, integrate_body_momentum, integrate_hard_magnet, integrate_pendulum, momentum_angles,
    resonance_initial_state, resonance_scan, thermal_bound, threshold_sym, turning_point_singamma, InertiaSpec,
    PendulumParams, RotorState, ScanRow, ThermalSpec, NV_ZERO_FIELD_SPLITTING,
};

use crate::config::{to_json, OutputFormat, ScenarioConfig, ScenarioKind, SpinInput};
use crate::error::classify;
use crate::manifest::{ManifestEntry, OutputSink};

pub const RESOLVED_CONFIG_NAME: &str = "resolved-config.json";
pub const SUMMARY_NAME: &str = "summary.json";

/// Scalar results of one run, keyed by metric name.
pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub metrics: Metrics,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs `cfg` into a fresh output directory and writes the manifest.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &std::path::Path) -> anyhow::Result<(Summary, Vec<ManifestEntry>)> {
    let sink = OutputSink::create(dir)?;
    let summary = run_scenario(cfg, &sink)?;
    let entries = sink.finish()?;
    Ok((summary, entries))
}

/// Echoes the resolved config, runs the scenario, and writes `summary.json`.
pub fn run_scenario(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Summary> {
    sink.write(RESOLVED_CONFIG_NAME, to_json(cfg).as_bytes())?;
    let metrics = match cfg.scenario {
        ScenarioKind::Trajectory => trajectory(cfg, sink),
        ScenarioKind::PhasePortrait => phase_portrait(cfg, sink),
        ScenarioKind::PendulumCompare => pendulum_compare(cfg, sink),
        ScenarioKind::ThermalEnsemble => thermal_ensemble(cfg, sink),
        ScenarioKind::ResonanceScan => resonance(cfg, sink),
    }
    .with_context(|| format!("scenario `{}`", cfg.scenario.key()))?;
    let summary = Summary { scenario: cfg.scenario, seed: cfg.seed, metrics };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    sink.write(SUMMARY_NAME, text.as_bytes())?;
    Ok(summary)
}

fn trajectory(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Metrics> {
    let p = cfg.trajectory.as_ref().expect("resolved");
    let inertia = cfg.inertia()?;
    let s = cfg.spin.s_body_si()?;
    let drive = cfg.drive.as_ref().expect("resolved");
    let j = drive.momentum();
    let a = drive.axis as usize - 1;
    let mut dir = Vector3::zeros();
    dir[a] = p.tilt.cos();
    dir[(a + 1) % 3] = p.tilt.sin();
    let j_body = dir * j;
    let (beta, gamma) = momentum_angles(&j_body);
    let state0 = RotorState::new(euler_to_orientation(0.0, beta, gamma), j_body);
    let traj = integrate_hard_magnet(&state0, &s, &inertia, (0.0, p.t_end), &cfg.integrator).map_err(classify)?;

    if cfg.output.wants(OutputFormat::Csv) {
        sink.write_with("trajectory.csv", |w| traj.write_csv(w))?;
    }
    if cfg.output.wants(OutputFormat::Json) {
        sink.write_with("trajectory.json", |w| traj.write_json(w))?;
    }

    let first = &traj.states[0];
    let (jn0, e0, js0) = (first.j_body.norm(), hard_magnet_energy(&first.j_body, &s, &inertia), first.j_space());
    let mut m = Metrics::new();
    let mut drift = [0.0f64; 3];
    for st in &traj.states {
        drift[0] = drift[0].max((st.j_body.norm() - jn0).abs() / jn0);
        drift[1] = drift[1].max(((hard_magnet_energy(&st.j_body, &s, &inertia) - e0) / e0).abs());
        drift[2] = drift[2].max((st.j_space() - js0).norm() / js0.norm());
    }
    let last = traj.observables.last().expect("non-empty trajectory");
    let min_proxy = traj.observables.iter().map(|o| o.align_proxy).fold(f64::INFINITY, f64::min);
    m.insert("samples".into(), traj.times.len() as f64);
    m.insert("j_norm_drift".into(), drift[0]);
    m.insert("energy_drift".into(), drift[1]);
    m.insert("j_space_drift".into(), drift[2]);
    m.insert("final_align_geom".into(), last.align_geom);
    m.insert("final_align_proxy".into(), last.align_proxy);
    m.insert("min_align_proxy".into(), min_proxy);
    m.insert("accepted_steps".into(), traj.meta.accepted_steps as f64);
    m.insert("large_spin_warning".into(), flag(traj.meta.large_spin_warning));
    Ok(m)
}

fn phase_portrait(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Metrics> {
    let p = cfg.phase_portrait.as_ref().expect("resolved");
    let inertia = cfg.inertia()?;
    let base = cfg.spin.s_body_si()?;
    let j = cfg.drive_j()?;
    let mut m = Metrics::new();
    for (k, &s2) in p.s2_values.iter().enumerate() {
        let s = Vector3::new(base.x, s2 * cfg.spin.unit(), base.z);
        let orbits: Vec<_> = (0..p.orbits)
            .into_par_iter()
            .map(|o| {
                let beta = PI * (o + 1) as f64 / (p.orbits + 1) as f64;
                let gamma = if o % 2 == 0 { FRAC_PI_2 } else { 0.0 };
                let j0 = body_angmom_from_euler(j, beta, gamma);
                integrate_body_momentum(&j0, &s, &inertia, (0.0, p.t_end), &cfg.integrator, None)
            })
            .collect::<Result<_, _>>()
            .map_err(classify)?;
        sink.write_with(&format!("phase_portrait_{k}.csv"), |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["orbit", "t", "J1_over_J", "J2_over_J", "J3_over_J"])?;
            for (o, series) in orbits.iter().enumerate() {
                for (t, jb) in series.times.iter().zip(&series.j_body) {
                    let n = jb.norm();
                    out.write_record([
                        o.to_string(),
                        fmt_f64(*t),
                        fmt_f64(jb.x / n),
                        fmt_f64(jb.y / n),
                        fmt_f64(jb.z / n),
                    ])?;
                }
            }
            out.flush()?;
            Ok(())
        })?;
        let max_drift = orbits
            .iter()
            .flat_map(|s| s.j_body.iter().map(move |v| (v.norm() - s.j_body[0].norm()).abs() / s.j_body[0].norm()))
            .fold(0.0, f64::max);
        m.insert(format!("family_{k}_s2"), s2);
        m.insert(format!("family_{k}_j_norm_drift"), max_drift);
    }
    m.insert("families".into(), p.s2_values.len() as f64);
    m.insert("orbits".into(), p.orbits as f64);
    Ok(m)
}

fn pendulum_compare(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Metrics> {
    let p = cfg.pendulum_compare.as_ref().expect("resolved");
    let inertia = cfg.inertia()?;
    let s = cfg.spin.s_body_si()?;
    let j = cfg.drive_j()?;
    let j3 = p.j3_fraction * j;
    let gamma0 = FRAC_PI_2 + p.gamma_offset;
    let params = PendulumParams::from_inertia(&inertia, s.y, j).map_err(classify)?;
    let pend = integrate_pendulum(gamma0, j3, &params, (0.0, p.t_end), &cfg.integrator).map_err(classify)?;
    let j0 = body_angmom_from_euler(j, p.j3_fraction.acos(), gamma0);
    let full = integrate_body_momentum(&j0, &s, &inertia, (0.0, p.t_end), &cfg.integrator, Some(&pend.times))
        .map_err(classify)?;
    let g_full = full.gamma();
    let err: Vec<f64> = g_full.iter().zip(&pend.gamma).map(|(a, b)| (a - b).abs()).collect();

    sink.write_with("pendulum_compare.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "gamma_full", "gamma_pendulum", "abs_error"])?;
        for k in 0..pend.times.len() {
            out.write_record([fmt_f64(pend.times[k]), fmt_f64(g_full[k]), fmt_f64(pend.gamma[k]), fmt_f64(err[k])])?;
        }
        out.flush()?;
        Ok(())
    })?;

    // Libration about π/2 keeps γ inside (-π/2, 3π/2).
    let trapped = g_full.iter().all(|g| (g - FRAC_PI_2).abs() < PI);
    let sin_min = g_full.iter().map(|g| g.sin()).fold(f64::INFINITY, f64::min);
    let thr = threshold_sym(j3, inertia.transverse(), inertia.i3, j);
    let tp = turning_point_singamma(j3, &params).map_err(classify)?;
    let mut m = Metrics::new();
    m.insert("max_abs_error".into(), err.iter().cloned().fold(0.0, f64::max));
    m.insert("singamma_min_full".into(), sin_min);
    m.insert("singamma_min_pendulum".into(), pend.min_sin_gamma(&params).map_err(classify)?);
    m.insert("singamma_min_predicted".into(), tp.sin_gamma_min);
    m.insert("s2_over_threshold_sym".into(), s.y / thr);
    m.insert("trapped_flag".into(), flag(trapped));
    // The stabilization criterion proper: sinγ never drops below 4/5.
    m.insert("stabilized_flag".into(), flag(trapped && sin_min >= 0.8));
    if let Some(w) = small_oscillation_frequency(&params).map_err(classify)? {
        m.insert("small_oscillation_frequency".into(), w);
    }
    Ok(m)
}

fn thermal_ensemble(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Metrics> {
    let th = cfg.thermal.as_ref().expect("resolved");
    let p = cfg.thermal_ensemble.as_ref().expect("resolved");
    let inertia = cfg.inertia()?;
    let s = cfg.spin.s_body_si()?;
    let j = cfg.drive_j()?;
    let t_end = p.t_end.expect("resolved");
    let spec =
        ThermalSpec { temperature: th.temperature, j_drive: j, inertia, seed: cfg.seed, n_samples: th.n_samples };
    let settings = cfg.integrator.with_sample_interval(t_end / (p.time_samples - 1) as f64);
    let series = ensemble_alignment(&spec, &s, (0.0, t_end), &settings, th.observable).map_err(classify)?;
    sink.write_with("ensemble.csv", |w| series.write_csv(w))?;

    let tau = spec.tau_sym().map_err(classify)?;
    let fit = fit_gaussian_decay(&series.times, &series.mean).map_err(classify)?;
    let decay = DecaySummary::new(&fit, tau);
    let t_max = thermal_bound(s.y, j, inertia.transverse(), inertia.i3);
    let mut m = Metrics::new();
    m.insert("tau_sym".into(), tau);
    m.insert("tau_fit".into(), decay.tau_fit);
    m.insert("tau_ratio".into(), decay.ratio);
    m.insert("fit_r_squared".into(), decay.r_squared);
    m.insert("no_decay".into(), flag(decay.no_decay));
    m.insert("late_mean".into(), series.window_mean(p.late_fraction * t_end, t_end).unwrap_or(f64::NAN));
    m.insert("min_mean".into(), series.mean.iter().cloned().fold(f64::INFINITY, f64::min));
    m.insert("final_mean".into(), *series.mean.last().expect("non-empty series"));
    m.insert("thermal_bound".into(), t_max);
    m.insert("temperature_over_bound".into(), th.temperature / t_max);
    m.insert("width_warning".into(), flag(spec.width_warning()));
    Ok(m)
}

struct ScanResult {
    rows: Vec<ScanRow>,
}

impl ScanResult {
    fn nearest(&self, ratio: f64) -> f64 {
        self.rows
            .iter()
            .min_by(|a, b| (a.j_over_id - ratio).abs().total_cmp(&(b.j_over_id - ratio).abs()))
            .map(|r| r.avg_j2_over_j)
            .unwrap_or(f64::NAN)
    }

    fn min(&self) -> f64 {
        self.rows.iter().map(|r| r.avg_j2_over_j).fold(f64::INFINITY, f64::min)
    }
}

fn scan_one(
    cfg: &ScenarioConfig,
    spin: &SpinInput,
    inertia: &InertiaSpec,
    sink: &OutputSink,
    suffix: &str,
) -> anyhow::Result<ScanResult> {
    let p = cfg.resonance_scan.as_ref().expect("resolved");
    let (nv, psi0) = spin.nv_state()?;
    let d = NV_ZERO_FIELD_SPLITTING;
    let rows =
        resonance_scan(&p.ratios(), &psi0, &nv, inertia, d, p.gamma_offset, p.window, &p.settings).map_err(classify)?;
    sink.write_with(&format!("resonance_scan{suffix}.csv"), |w| write_scan_csv(&rows, w))?;
    if let Some(r) = p.trace_ratio {
        let state = resonance_initial_state(r * inertia.i2 * d, p.gamma_offset);
        let series =
            evolve_meanfield(&state, &psi0, &nv, inertia, d, (0.0, p.window), &p.settings).map_err(classify)?;
        sink.write_with(&format!("meanfield_trace{suffix}.csv"), |w| series.write_csv(w))?;
    }
    Ok(ScanResult { rows })
}

fn resonance(cfg: &ScenarioConfig, sink: &OutputSink) -> anyhow::Result<Metrics> {
    let p = cfg.resonance_scan.as_ref().expect("resolved");
    let main = scan_one(cfg, &cfg.spin, &cfg.inertia()?, sink, "")?;
    let mut m = Metrics::new();
    let at_res = main.nearest(1.0);
    let at_start = main.nearest(p.start);
    m.insert("avg_at_resonance".into(), at_res);
    m.insert("avg_at_start".into(), at_start);
    m.insert("min_avg".into(), main.min());
    m.insert("relative_dip".into(), 1.0 - at_res / at_start);
    if let Some(c) = &p.companion {
        let comp = scan_one(cfg, &c.spin, &c.geometry.inertia()?, sink, "_companion")?;
        m.insert("companion_avg_at_resonance".into(), comp.nearest(1.0));
        m.insert("companion_min_avg".into(), comp.min());
    }
    Ok(m)
}
