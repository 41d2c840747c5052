//! Scenario configuration: parsing, validation and default resolution.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use spinrotor_core::inertia::DEFAULT_SYMMETRY_TOLERANCE;
use spinrotor_core::meanfield::{DEFAULT_AVERAGING_WINDOW, DEFAULT_GAMMA_OFFSET};
use spinrotor_core::{
    ellipsoid_inertia, rwa_effective_spin, AlignmentObservable, InertiaSpec, IntegratorSettings, MeanFieldSettings,
    NVConfig, SpinAmplitudes, DIAMOND_DENSITY, HBAR,
};

use crate::error::{classify, config_err};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Trajectory,
    PhasePortrait,
    PendulumCompare,
    ThermalEnsemble,
    ResonanceScan,
}

impl ScenarioKind {
    pub fn key(self) -> &'static str {
        match self {
            Self::Trajectory => "trajectory",
            Self::PhasePortrait => "phase_portrait",
            Self::PendulumCompare => "pendulum_compare",
            Self::ThermalEnsemble => "thermal_ensemble",
            Self::ResonanceScan => "resonance_scan",
        }
    }
}

fn default_symmetry_tolerance() -> f64 {
    DEFAULT_SYMMETRY_TOLERANCE
}

/// Rotor shape: homogeneous ellipsoid (semiaxes in metres, density in
/// kg/m³) or explicit principal moments (kg·m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semiaxes: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<[f64; 3]>,
    /// Relative tolerance under which two moments count as equal.
    #[serde(default = "default_symmetry_tolerance")]
    pub symmetry_tolerance: f64,
}

impl Geometry {
    fn resolve(&mut self) -> anyhow::Result<()> {
        match (self.semiaxes.is_some(), self.moments.is_some()) {
            (true, true) => {
                return Err(config_err("geometry: give either `semiaxes` (+ `density`) or `moments`, not both"))
            }
            (false, false) => return Err(config_err("geometry: one of `semiaxes` or `moments` is required")),
            (true, false) => {
                self.density.get_or_insert(DIAMOND_DENSITY);
            }
            (false, true) => {
                if self.density.is_some() {
                    return Err(config_err("geometry: `density` only applies together with `semiaxes`"));
                }
            }
        }
        self.inertia().map(|_| ())
    }

    pub fn inertia(&self) -> anyhow::Result<InertiaSpec> {
        let tol = self.symmetry_tolerance;
        let spec = match (self.semiaxes, self.moments) {
            (Some([a, b, c]), None) => {
                ellipsoid_inertia(a, b, c, self.density.unwrap_or(DIAMOND_DENSITY), tol).map_err(classify)?
            }
            (None, Some([i1, i2, i3])) => InertiaSpec::new(i1, i2, i3, tol).map_err(classify)?,
            _ => return Err(config_err("geometry: exactly one of `semiaxes` or `moments` is required")),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinUnits {
    /// Components in units of ħ.
    #[default]
    Hbar,
    /// Components in J·s.
    Si,
}

/// Embedded spin: NV centers or an explicit body-frame vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nv: Option<NVConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_body: Option<[f64; 3]>,
    #[serde(default)]
    pub units: SpinUnits,
}

impl SpinInput {
    fn resolve(&self) -> anyhow::Result<()> {
        match (&self.nv, &self.s_body) {
            (Some(_), Some(_)) => Err(config_err("spin: give either `nv` or `s_body`, not both")),
            (None, None) => Err(config_err("spin: one of `nv` or `s_body` is required")),
            _ => self.s_body_si().map(|_| ()),
        }
    }

    /// Body-frame spin, J·s.
    pub fn s_body_si(&self) -> anyhow::Result<nalgebra::Vector3<f64>> {
        match (&self.nv, &self.s_body) {
            (Some(nv), None) => Ok(rwa_effective_spin(nv).map_err(classify)?.s_body),
            (None, Some(s)) => {
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(config_err("spin.s_body must be finite"));
                }
                Ok(nalgebra::Vector3::from(*s) * self.unit())
            }
            _ => Err(config_err("spin: exactly one of `nv` or `s_body` is required")),
        }
    }

    /// Size of one `units` step, J·s.
    pub fn unit(&self) -> f64 {
        match self.units {
            SpinUnits::Hbar => HBAR,
            SpinUnits::Si => 1.0,
        }
    }

    /// Common initial state of the NV centers.
    pub fn nv_state(&self) -> anyhow::Result<(NVConfig, SpinAmplitudes)> {
        let Some(nv) = &self.nv else {
            return Err(config_err("resonance dynamics needs `spin.nv` (an explicit `s_body` has no quantum state)"));
        };
        let Some(first) = nv.centers.first() else {
            return Err(config_err("spin.nv.centers must not be empty"));
        };
        if nv.centers.iter().any(|c| c.s != first.s) {
            return Err(config_err("all NV centers must start in the same spin state"));
        }
        Ok((nv.clone(), SpinAmplitudes::from_s(first.s).map_err(classify)?))
    }
}

fn default_axis() -> u8 {
    2
}

/// Rotation drive. Exactly one of `j` (J·s), `omega` (rad/s) or `frequency`
/// (Hz) on input; the resolved form always carries `j`, and keeps the input
/// rate in `from_omega` for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drive {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// Body axis (1, 2 or 3) the rotation is about.
    #[serde(default = "default_axis")]
    pub axis: u8,
    /// Angular rate the momentum was converted from, rad/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_omega: Option<f64>,
}

impl Drive {
    fn resolve(&mut self, inertia: &InertiaSpec) -> anyhow::Result<()> {
        if !(1..=3).contains(&self.axis) {
            return Err(config_err(format!("drive.axis must be 1, 2 or 3, got {}", self.axis)));
        }
        let moment = inertia.moments()[self.axis as usize - 1];
        let given = [self.j.is_some(), self.omega.is_some(), self.frequency.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(config_err("drive: exactly one of `j`, `omega` or `frequency` is required"));
        }
        if let Some(f) = self.frequency.take() {
            self.omega = Some(TAU * f);
        }
        if let Some(w) = self.omega.take() {
            if self.from_omega.is_some() {
                return Err(config_err("drive.from_omega is set by the resolver and cannot be combined with `omega`"));
            }
            self.j = Some(moment * w);
            self.from_omega = Some(w);
        }
        let j = self.j.unwrap_or(f64::NAN);
        if !(j > 0.0) || !j.is_finite() {
            return Err(config_err(format!("drive: angular momentum must be positive and finite, got {j}")));
        }
        if let Some(w) = self.from_omega {
            if ((moment * w - j) / j).abs() > 1e-12 {
                return Err(config_err("drive.from_omega disagrees with drive.j (J = I_axis ω)"));
            }
        }
        Ok(())
    }

    pub fn momentum(&self) -> f64 {
        self.j.expect("drive resolved")
    }
}

fn default_n_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalInput {
    /// Kelvin.
    pub temperature: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub observable: AlignmentObservable,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

fn default_directory() -> String {
    "out".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

impl OutputSpec {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn default_tilt() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Seconds.
    pub t_end: f64,
    /// Initial angle between `J` and the drive axis, tipped toward the next
    /// body axis (rad).
    #[serde(default = "default_tilt")]
    pub tilt: f64,
}

fn default_s2_values() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

fn default_orbits() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePortraitParams {
    pub t_end: f64,
    /// Values of `S2` in `spin.units`; `S1`, `S3` come from `spin`.
    #[serde(default = "default_s2_values")]
    pub s2_values: Vec<f64>,
    #[serde(default = "default_orbits")]
    pub orbits: usize,
}

fn default_j3_fraction() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumCompareParams {
    pub t_end: f64,
    /// `γ(0) - π/2`, rad.
    #[serde(default)]
    pub gamma_offset: f64,
    /// `J3(0)/J`.
    #[serde(default = "default_j3_fraction")]
    pub j3_fraction: f64,
}

/// Horizon used when neither `t_end` nor `t_end_tau` is given.
pub const DEFAULT_T_END_TAU: f64 = 3.0;

fn default_time_samples() -> usize {
    301
}

fn default_late_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalEnsembleParams {
    /// Horizon in units of the `S2 = 0` decay time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end_tau: Option<f64>,
    /// Horizon in seconds; resolved from `t_end_tau` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
    /// Long-time alignment is averaged over `t ≥ late_fraction·t_end`.
    #[serde(default = "default_late_fraction")]
    pub late_fraction: f64,
}

impl Default for ThermalEnsembleParams {
    fn default() -> Self {
        Self {
            t_end_tau: None,
            t_end: None,
            time_samples: default_time_samples(),
            late_fraction: default_late_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Companion {
    pub geometry: Geometry,
    pub spin: SpinInput,
}

fn default_ratio_start() -> f64 {
    0.9
}
fn default_ratio_stop() -> f64 {
    1.1
}
fn default_ratio_points() -> usize {
    21
}
fn default_window() -> f64 {
    DEFAULT_AVERAGING_WINDOW
}
fn default_gamma_offset() -> f64 {
    DEFAULT_GAMMA_OFFSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceScanParams {
    /// Grid of `J/(I2 D)` from `start` to `stop` inclusive.
    #[serde(default = "default_ratio_start")]
    pub start: f64,
    #[serde(default = "default_ratio_stop")]
    pub stop: f64,
    #[serde(default = "default_ratio_points")]
    pub points: usize,
    /// Averaging window, seconds.
    #[serde(default = "default_window")]
    pub window: f64,
    /// `γ(0) - π/2`, rad.
    #[serde(default = "default_gamma_offset")]
    pub gamma_offset: f64,
    /// Also write the full `⟨J2⟩`, `⟨S2⟩` trace at this ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ratio: Option<f64>,
    #[serde(default)]
    pub settings: MeanFieldSettings,
    /// Second rotor scanned on the same grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<Companion>,
}

impl Default for ResonanceScanParams {
    fn default() -> Self {
        Self {
            start: default_ratio_start(),
            stop: default_ratio_stop(),
            points: default_ratio_points(),
            window: default_window(),
            gamma_offset: default_gamma_offset(),
            trace_ratio: None,
            settings: MeanFieldSettings::default(),
            companion: None,
        }
    }
}

impl ResonanceScanParams {
    pub fn ratios(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let n = self.points - 1;
        (0..=n).map(|k| self.start + (self.stop - self.start) * k as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub geometry: Geometry,
    pub spin: SpinInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<Drive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalInput>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_portrait: Option<PhasePortraitParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum_compare: Option<PendulumCompareParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_ensemble: Option<ThermalEnsembleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance_scan: Option<ResonanceScanParams>,
}

/// Parses JSON text into a validated config with every default filled in.
pub fn parse_config(text: &str) -> anyhow::Result<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
    from_value(value)
}

/// Like [`parse_config`] for an already parsed JSON document.
pub fn from_value(value: serde_json::Value) -> anyhow::Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            config_err(e.into_inner().to_string())
        } else {
            config_err(format!("at `{path}`: {}", e.into_inner()))
        }
    })?;
    cfg.resolve()
}

/// Pretty JSON of the resolved config, newline terminated.
pub fn to_json(cfg: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

fn positive(name: &str, v: f64) -> anyhow::Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn inertia(&self) -> anyhow::Result<InertiaSpec> {
        self.geometry.inertia()
    }

    pub fn drive_j(&self) -> anyhow::Result<f64> {
        self.drive.as_ref().map(Drive::momentum).ok_or_else(|| config_err("`drive` is required for this scenario"))
    }

    fn resolve(mut self) -> anyhow::Result<Self> {
        self.geometry.resolve()?;
        let inertia = self.inertia()?;
        self.spin.resolve()?;
        self.integrator.validate().map_err(classify)?;
        if self.output.formats.is_empty() {
            return Err(config_err("output.formats must not be empty"));
        }
        if self.output.directory.is_empty() {
            return Err(config_err("output.directory must not be empty"));
        }
        let kind = self.scenario;
        let blocks = [
            (ScenarioKind::Trajectory, self.trajectory.is_some()),
            (ScenarioKind::PhasePortrait, self.phase_portrait.is_some()),
            (ScenarioKind::PendulumCompare, self.pendulum_compare.is_some()),
            (ScenarioKind::ThermalEnsemble, self.thermal_ensemble.is_some()),
            (ScenarioKind::ResonanceScan, self.resonance_scan.is_some()),
        ];
        for (k, present) in blocks {
            if present && k != kind {
                return Err(config_err(format!("block `{}` does not apply to scenario `{}`", k.key(), kind.key())));
            }
        }
        if kind != ScenarioKind::ThermalEnsemble && self.thermal.is_some() {
            return Err(config_err(format!("`thermal` does not apply to scenario `{}`", kind.key())));
        }

        match kind {
            ScenarioKind::ResonanceScan => {
                if self.drive.is_some() {
                    return Err(config_err("resonance_scan sets J from its ratio grid; remove `drive`"));
                }
            }
            _ => {
                let drive = self.drive.as_mut().ok_or_else(|| config_err("missing required key `drive`"))?;
                drive.resolve(&inertia)?;
            }
        }
        let needs_n2 = matches!(kind, ScenarioKind::PendulumCompare | ScenarioKind::ThermalEnsemble);
        if needs_n2 && self.drive.as_ref().is_some_and(|d| d.axis != 2) {
            return Err(config_err(format!(
                "scenario `{}` describes rotation about n2; drive.axis must be 2",
                kind.key()
            )));
        }

        match kind {
            ScenarioKind::Trajectory => {
                let p = self
                    .trajectory
                    .as_ref()
                    .ok_or_else(|| config_err("missing required key `trajectory` (needs `t_end`)"))?;
                positive("trajectory.t_end", p.t_end)?;
                if !p.tilt.is_finite() {
                    return Err(config_err("trajectory.tilt must be finite"));
                }
            }
            ScenarioKind::PhasePortrait => {
                let p = self
                    .phase_portrait
                    .as_ref()
                    .ok_or_else(|| config_err("missing required key `phase_portrait` (needs `t_end`)"))?;
                positive("phase_portrait.t_end", p.t_end)?;
                if p.s2_values.is_empty() || p.orbits == 0 {
                    return Err(config_err("phase_portrait needs at least one S2 value and one orbit"));
                }
                if p.s2_values.iter().any(|v| !v.is_finite()) {
                    return Err(config_err("phase_portrait.s2_values must be finite"));
                }
            }
            ScenarioKind::PendulumCompare => {
                let p = self
                    .pendulum_compare
                    .as_ref()
                    .ok_or_else(|| config_err("missing required key `pendulum_compare` (needs `t_end`)"))?;
                positive("pendulum_compare.t_end", p.t_end)?;
                if !(p.j3_fraction.abs() < 1.0) || !p.gamma_offset.is_finite() {
                    return Err(config_err("pendulum_compare: |j3_fraction| must be < 1 and gamma_offset finite"));
                }
                if inertia.i3 == inertia.transverse() {
                    return Err(config_err("pendulum_compare: the effective moment I·I3/(I - I3) needs I ≠ I3"));
                }
            }
            ScenarioKind::ThermalEnsemble => {
                let th = self.thermal.as_ref().ok_or_else(|| config_err("missing required key `thermal`"))?;
                positive("thermal.temperature", th.temperature)?;
                if th.n_samples == 0 {
                    return Err(config_err("thermal.n_samples must be at least 1"));
                }
                let p = self.thermal_ensemble.get_or_insert_with(Default::default);
                match (p.t_end, p.t_end_tau) {
                    (Some(t), None) => positive("thermal_ensemble.t_end", t)?,
                    (None, tau_units) => {
                        let x = tau_units.unwrap_or(DEFAULT_T_END_TAU);
                        positive("thermal_ensemble.t_end_tau", x)?;
                        let tau = spinrotor_core::tau_sym(inertia.transverse(), inertia.i3, th.temperature)
                            .map_err(classify)?;
                        p.t_end = Some(x * tau);
                        p.t_end_tau = None;
                    }
                    _ => return Err(config_err("thermal_ensemble: give exactly one of `t_end` or `t_end_tau`")),
                }
                if p.time_samples < 2 {
                    return Err(config_err("thermal_ensemble.time_samples must be at least 2"));
                }
                if !(0.0..1.0).contains(&p.late_fraction) {
                    return Err(config_err("thermal_ensemble.late_fraction must lie in [0, 1)"));
                }
            }
            ScenarioKind::ResonanceScan => {
                self.spin.nv_state()?;
                let p = self.resonance_scan.get_or_insert_with(Default::default);
                if p.points == 0 {
                    return Err(config_err("resonance_scan.points must be at least 1"));
                }
                positive("resonance_scan.start", p.start)?;
                positive("resonance_scan.stop", p.stop)?;
                positive("resonance_scan.window", p.window)?;
                if !p.gamma_offset.is_finite() {
                    return Err(config_err("resonance_scan.gamma_offset must be finite"));
                }
                if let Some(r) = p.trace_ratio {
                    positive("resonance_scan.trace_ratio", r)?;
                }
                p.settings.validate().map_err(classify)?;
                if let Some(c) = p.companion.as_mut() {
                    c.geometry.resolve()?;
                    c.spin.resolve()?;
                    c.spin.nv_state()?;
                }
            }
        }
        Ok(self)
    }
}
