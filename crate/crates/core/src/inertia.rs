//! Principal moments of inertia and rotor classification.
//!
//! Axis labeling: `n3` is always the (approximate) symmetry axis. For prolate
//! rotors it carries the smallest moment, for oblate rotors the largest.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result};

/// Relative tolerance used to decide exact symmetry (`I1 == I2`).
pub const DEFAULT_SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotorClass {
    SymmetricProlate,
    SymmetricOblate,
    NearProlate,
    NearOblate,
    Generic,
}

impl RotorClass {
    pub fn is_symmetric(self) -> bool {
        matches!(self, RotorClass::SymmetricProlate | RotorClass::SymmetricOblate)
    }

    pub fn is_prolate_like(self) -> bool {
        matches!(self, RotorClass::SymmetricProlate | RotorClass::NearProlate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaSpec {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub rotor_class: RotorClass,
    /// Relative tolerance used for the near-symmetric classes.
    pub symmetry_tolerance: f64,
}

impl InertiaSpec {
    /// Builds a spec from explicit moments, classifying with `tol` for the
    /// near-symmetric test.
    pub fn new(i1: f64, i2: f64, i3: f64, tol: f64) -> Result<Self> {
        validate_moments(i1, i2, i3)?;
        let rotor_class = classify_rotor(i1, i2, i3, tol)?;
        Ok(Self { i1, i2, i3, rotor_class, symmetry_tolerance: tol })
    }

    pub fn moments(&self) -> [f64; 3] {
        [self.i1, self.i2, self.i3]
    }

    /// Transverse moment used by models that assume `I1 = I2`.
    pub fn transverse(&self) -> f64 {
        0.5 * (self.i1 + self.i2)
    }

    pub fn is_symmetric(&self) -> bool {
        rel_eq(self.i1, self.i2, DEFAULT_SYMMETRY_TOLERANCE)
    }

    pub fn validate(&self) -> Result<()> {
        validate_moments(self.i1, self.i2, self.i3)?;
        let cls = classify_rotor(self.i1, self.i2, self.i3, self.symmetry_tolerance)?;
        if cls != self.rotor_class {
            return Err(Error::InvalidInertia(format!(
                "rotor class {:?} inconsistent with moments (classified as {:?})",
                self.rotor_class, cls
            )));
        }
        Ok(())
    }
}

fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn validate_moments(i1: f64, i2: f64, i3: f64) -> Result<()> {
    let m = [i1, i2, i3];
    if m.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidInertia(format!(
            "moments must be finite and strictly positive, got ({i1:e}, {i2:e}, {i3:e})"
        )));
    }
    // Triangle inequalities, with rounding slack.
    for k in 0..3 {
        let (a, b, c) = (m[k], m[(k + 1) % 3], m[(k + 2) % 3]);
        if a + b < c * (1.0 - 1e-12) {
            return Err(Error::InvalidInertia(format!("triangle inequality violated: {a:e} + {b:e} < {c:e}")));
        }
    }
    Ok(())
}

/// Classifies a rotor from its principal moments.
///
/// Exact symmetry uses the fixed relative tolerance
/// [`DEFAULT_SYMMETRY_TOLERANCE`]; `tol` bounds the relative asymmetry
/// admitted by the near-prolate / near-oblate classes.
pub fn classify_rotor(i1: f64, i2: f64, i3: f64, tol: f64) -> Result<RotorClass> {
    validate_moments(i1, i2, i3)?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("symmetry tolerance must be >= 0, got {tol}")));
    }
    let sym_tol = DEFAULT_SYMMETRY_TOLERANCE;
    if rel_eq(i1, i2, sym_tol) {
        if i3 < i1 && !rel_eq(i1, i3, sym_tol) {
            return Ok(RotorClass::SymmetricProlate);
        }
        if i3 > i1 && !rel_eq(i1, i3, sym_tol) {
            return Ok(RotorClass::SymmetricOblate);
        }
        // Spherical: no distinguished axis.
        return Ok(RotorClass::Generic);
    }
    if i1 >= i2 && i2 > i3 && (i1 - i2) / i1 <= tol {
        return Ok(RotorClass::NearProlate);
    }
    if i3 > i2 && i2 >= i1 && (i2 - i1) / i2 <= tol {
        return Ok(RotorClass::NearOblate);
    }
    Ok(RotorClass::Generic)
}

/// Homogeneous ellipsoid with semiaxes `a` (along n1), `b` (along n2) and
/// `c` (along n3), in metres.
///
/// Returns moments `I1 = m(b²+c²)/5`, `I2 = m(a²+c²)/5`, `I3 = m(a²+b²)/5`.
/// With `c` the distinguished semiaxis this keeps `n3` on the symmetry axis.
pub fn ellipsoid_inertia(a: f64, b: f64, c: f64, density: f64, tol: f64) -> Result<InertiaSpec> {
    for (name, v) in [("a", a), ("b", b), ("c", c), ("density", density)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidGeometry(format!("{name} must be finite and > 0, got {v}")));
        }
    }
    let mass = ellipsoid_mass(a, b, c, density);
    let i1 = mass * (b * b + c * c) / 5.0;
    let i2 = mass * (a * a + c * c) / 5.0;
    let i3 = mass * (a * a + b * b) / 5.0;
    InertiaSpec::new(i1, i2, i3, tol)
}

pub fn ellipsoid_mass(a: f64, b: f64, c: f64, density: f64) -> f64 {
    4.0 / 3.0 * PI * a * b * c * density
}
