//! Physical constants (SI).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reduced Planck constant, J·s (exact SI value).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (exact SI value).
pub const K_B: f64 = 1.380_649e-23;
/// NV zero-field splitting, rad/s.
pub const NV_ZERO_FIELD_SPLITTING: f64 = 2.0 * PI * 2.87e9;
/// Mass density of diamond, kg/m³.
pub const DIAMOND_DENSITY: f64 = 3510.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub k_b: f64,
    /// Zero-field splitting D in rad/s.
    pub zero_field_splitting: f64,
    pub default_density: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { hbar: HBAR, k_b: K_B, zero_field_splitting: NV_ZERO_FIELD_SPLITTING, default_density: DIAMOND_DENSITY }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.hbar, self.k_b, self.zero_field_splitting, self.default_density];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(crate::Error::InvalidParameter("physical constants must be finite and strictly positive".into()))
        }
    }
}
