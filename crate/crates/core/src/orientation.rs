//! Rotor orientation and the body-frame angular-momentum state.
//!
//! Orientation is stored as a unit quaternion mapping body-frame vectors to
//! the space frame. Euler angles (z-y'-z'') are a derived view only.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::inertia::InertiaSpec;

/// Below this `|sin β|` the Euler decomposition is degenerate and `γ` is set to 0.
pub const GIMBAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    q: UnitQuaternion<f64>,
}

impl Default for Orientation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Orientation {
    pub fn identity() -> Self {
        Self { q: UnitQuaternion::identity() }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self { q }
    }

    /// Normalizes `(w, x, y, z)`.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { q: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)) }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.q
    }

    /// `[w, x, y, z]`
    pub fn components(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Rotation matrix whose columns are the body axes `n1, n2, n3` in the space frame.
    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Body axis `n_k` (k = 1, 2, 3) in space coordinates.
    pub fn axis(&self, k: usize) -> Vector3<f64> {
        assert!((1..=3).contains(&k), "body axes are numbered 1..=3");
        self.matrix().column(k - 1).into_owned()
    }

    pub fn body_to_space(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    pub fn space_to_body(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse_transform_vector(v)
    }

    /// Euler angles `(α, β, γ)` in the z-y'-z'' convention.
    ///
    /// `β ∈ [0, π]`, `α, γ ∈ (-π, π]`. When `|sin β| < GIMBAL_EPS` the
    /// decomposition is degenerate; `γ` is fixed to 0 and `α` absorbs the
    /// remaining rotation about `e_z`.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        euler_from_matrix(&self.matrix())
    }

    /// Composition `R_z(α) R_y(β) R_z(γ)`: rotate by α about `e_z`, then by β
    /// about the new y axis, then by γ about the new z axis.
    pub fn from_euler(alpha: f64, beta: f64, gamma: f64) -> Self {
        let z = Vector3::z_axis();
        let y = Vector3::y_axis();
        let q = UnitQuaternion::from_axis_angle(&z, alpha)
            * UnitQuaternion::from_axis_angle(&y, beta)
            * UnitQuaternion::from_axis_angle(&z, gamma);
        Self { q }
    }

    /// Quaternion distance insensitive to the double cover: `min(|q1 - q2|, |q1 + q2|)`.
    pub fn distance(&self, other: &Orientation) -> f64 {
        let a = self.q.quaternion().coords;
        let b = other.q.quaternion().coords;
        (a - b).norm().min((a + b).norm())
    }
}

pub fn euler_to_orientation(alpha: f64, beta: f64, gamma: f64) -> Orientation {
    Orientation::from_euler(alpha, beta, gamma)
}

fn euler_from_matrix(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let cb = r[(2, 2)].clamp(-1.0, 1.0);
    // sin β from the off-diagonal column is more accurate than sqrt(1 - cb²) near β = 0, π.
    let sb = (r[(0, 2)].powi(2) + r[(1, 2)].powi(2)).sqrt();
    let beta = sb.atan2(cb);
    if sb < GIMBAL_EPS {
        let alpha = if cb > 0.0 { r[(1, 0)].atan2(r[(0, 0)]) } else { (-r[(1, 0)]).atan2(-r[(0, 0)]) };
        return (alpha, beta, 0.0);
    }
    let alpha = r[(1, 2)].atan2(r[(0, 2)]);
    let gamma = r[(2, 1)].atan2(-r[(2, 0)]);
    (alpha, beta, gamma)
}

/// Body-frame components of a total angular momentum `J e_z`, given the
/// Euler angles of the body: `(-J sinβ cosγ, J sinβ sinγ, J cosβ)`.
pub fn body_angmom_from_euler(j: f64, beta: f64, gamma: f64) -> Vector3<f64> {
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    Vector3::new(-j * sb * cg, j * sb * sg, j * cb)
}

/// Mechanical angular velocity `ω_k = (J_k - S_k) / I_k` (body frame).
pub fn omega_from_j(j_body: &Vector3<f64>, s_body: &Vector3<f64>, inertia: &InertiaSpec) -> Vector3<f64> {
    Vector3::new(
        (j_body.x - s_body.x) / inertia.i1,
        (j_body.y - s_body.y) / inertia.i2,
        (j_body.z - s_body.z) / inertia.i3,
    )
}

/// Orientation plus body-frame total angular momentum `J_k = J·n_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorState {
    pub orientation: Orientation,
    pub j_body: Vector3<f64>,
}

impl RotorState {
    pub fn new(orientation: Orientation, j_body: Vector3<f64>) -> Self {
        Self { orientation, j_body }
    }

    /// Space-frame total angular momentum `R(q) J_body`.
    pub fn j_space(&self) -> Vector3<f64> {
        self.orientation.body_to_space(&self.j_body)
    }

    /// Angles of the body relative to the total angular momentum:
    /// `β = acos(J3/|J|)` and `γ = atan2(J2, -J1)`, i.e. the Euler angles in a
    /// space frame with `e_z` along `J`.
    pub fn momentum_angles(&self) -> (f64, f64) {
        momentum_angles(&self.j_body)
    }
}

pub fn momentum_angles(j_body: &Vector3<f64>) -> (f64, f64) {
    let jt = (j_body.x * j_body.x + j_body.y * j_body.y).sqrt();
    let beta = jt.atan2(j_body.z);
    let gamma = j_body.y.atan2(-j_body.x);
    (beta, gamma)
}

/// Serializable form of [`RotorState`]: `q = [w, x, y, z]`, `j_body` in J·s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorStateRecord {
    pub q: [f64; 4],
    pub j_body: [f64; 3],
}

impl From<&RotorState> for RotorStateRecord {
    fn from(s: &RotorState) -> Self {
        Self { q: s.orientation.components(), j_body: s.j_body.into() }
    }
}

impl From<&RotorStateRecord> for RotorState {
    fn from(r: &RotorStateRecord) -> Self {
        RotorState {
            orientation: Orientation::from_components(r.q[0], r.q[1], r.q[2], r.q[3]),
            j_body: Vector3::from(r.j_body),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};

    fn rz(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
    fn ry(b: f64) -> Matrix3<f64> {
        let (s, c) = b.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    #[test]
    fn identity_euler() {
        let o = euler_to_orientation(0.0, 0.0, 0.0);
        for k in 1..=3 {
            let mut e = Vector3::zeros();
            e[k - 1] = 1.0;
            assert!((o.axis(k) - e).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_tilt_puts_n3_on_ex() {
        let o = euler_to_orientation(0.0, FRAC_PI_2, 0.0);
        assert!((o.axis(3) - Vector3::x()).norm() < 1e-15);
    }

    #[test]
    fn matches_hand_matrix_product() {
        let (a, b, g) = (0.3, 1.1, -2.0);
        let expected = rz(a) * ry(b) * rz(g);
        let got = euler_to_orientation(a, b, g).matrix();
        assert!((expected - got).norm() < 1e-14);
    }

    #[test]
    fn body_components_of_space_momentum() {
        // With J = J e_z, the body components are e_z·n_k J.
        let (a, b, g) = (0.7, FRAC_PI_2, FRAC_PI_2);
        let o = euler_to_orientation(a, b, g);
        let j = 2.5;
        let via_rotation = o.space_to_body(&Vector3::new(0.0, 0.0, j));
        let direct = body_angmom_from_euler(j, b, g);
        assert!((via_rotation - direct).norm() < 1e-14);
        assert!((direct - Vector3::new(0.0, j, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn body_angmom_examples() {
        let j = 3.0;
        assert!((body_angmom_from_euler(j, 0.0, 1.234) - Vector3::new(0.0, 0.0, j)).norm() < 1e-15);
        let v = body_angmom_from_euler(j, FRAC_PI_3, FRAC_PI_6);
        // sin(π/3) = √3/2, cos(π/6) = √3/2, sin(π/6) = 1/2, cos(π/3) = 1/2
        let s3 = 3f64.sqrt() / 2.0;
        assert!((v.x + j * s3 * s3).abs() < 1e-15);
        assert!((v.y - j * s3 * 0.5).abs() < 1e-15);
        assert!((v.z - j * 0.5).abs() < 1e-15);
    }

    #[test]
    fn gimbal_lock_is_deterministic() {
        let o = euler_to_orientation(0.4, 0.0, 0.3);
        let (a, b, g) = o.euler_angles();
        assert_eq!(g, 0.0);
        assert!(b.abs() < 1e-12);
        assert!((a - 0.7).abs() < 1e-12);
        let o = euler_to_orientation(0.4, PI, 0.3);
        let (a, b, g) = o.euler_angles();
        assert_eq!(g, 0.0);
        assert!((b - PI).abs() < 1e-12);
        assert!(euler_to_orientation(a, b, g).distance(&o) < 1e-12);
    }

    #[test]
    fn omega_examples() {
        let inertia = InertiaSpec::new(2.0, 3.0, 4.0, 0.1).unwrap();
        let j = Vector3::new(1.0, -2.0, 0.5);
        let w = omega_from_j(&j, &Vector3::zeros(), &inertia);
        assert_eq!(w, Vector3::new(0.5, -2.0 / 3.0, 0.125));
        assert_eq!(omega_from_j(&j, &j, &inertia), Vector3::zeros());
    }

    #[test]
    fn momentum_angles_invert_body_angmom() {
        let v = body_angmom_from_euler(2.0, 1.2, -2.5);
        let (b, g) = momentum_angles(&v);
        assert!((b - 1.2).abs() < 1e-14 && (g + 2.5).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn quaternion_euler_round_trip(
            a in -PI..PI, b in 0.01f64..(PI - 0.01), g in -PI..PI
        ) {
            let o = euler_to_orientation(a, b, g);
            let (a2, b2, g2) = o.euler_angles();
            let o2 = euler_to_orientation(a2, b2, g2);
            prop_assert!(o.distance(&o2) < 1e-10);
        }

        #[test]
        fn body_angmom_preserves_magnitude(j in 0.0f64..1e3, b in 0.0f64..PI, g in -PI..PI) {
            let v = body_angmom_from_euler(j, b, g);
            prop_assert!((v.norm_squared() - j * j).abs() <= 4.0 * f64::EPSILON * j * j);
        }

        #[test]
        fn omega_round_trip(
            j in prop::array::uniform3(-1.0f64..1.0),
            s in prop::array::uniform3(-1.0f64..1.0),
            m in prop::array::uniform3(1.0f64..1.5),
        ) {
            let inertia = InertiaSpec::new(m[0], m[1], m[2], 0.1).unwrap();
            let (j, s) = (Vector3::from(j), Vector3::from(s));
            let w = omega_from_j(&j, &s, &inertia);
            let back = Vector3::new(m[0] * w.x, m[1] * w.y, m[2] * w.z) + s;
            prop_assert!((back - j).norm() < 1e-14);
        }

        #[test]
        fn body_axes_orthonormal_right_handed(a in -PI..PI, b in 0.0f64..PI, g in -PI..PI) {
            let o = euler_to_orientation(a, b, g);
            let (n1, n2, n3) = (o.axis(1), o.axis(2), o.axis(3));
            prop_assert!((n1.cross(&n2) - n3).norm() < 1e-14);
            prop_assert!(n1.dot(&n2).abs() < 1e-14 && (n1.norm() - 1.0).abs() < 1e-14);
        }
    }
}
