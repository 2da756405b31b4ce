//! Rotation helpers shared by every module.
//!
//! Rotation matrices are stored in the column-vector convention (`R * v`)
//! unless a function says otherwise. Points handed around as rows (the
//! trajectory and camera formulas) go through [`row_mul`].

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Below this angle Rodrigues switches to its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;

/// Axis-angle vector to rotation matrix (Rodrigues).
pub fn axis_angle_to_matrix(aa: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = aa.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(aa);
    let (a, b) = if theta < SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2 to second order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix to axis-angle vector with angle in `[0, pi]`.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_matrix_eps(r, 1e-15, 100, UnitQuaternion::identity());
    q.scaled_axis()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right-handed rotation about +x.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Right-handed rotation about +y.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Right-handed rotation about +z.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Row vector times matrix: `p * m`.
#[inline]
pub fn row_mul(p: &Vector3<f64>, m: &Matrix3<f64>) -> Vector3<f64> {
    m.tr_mul(p)
}

/// Geodesic angle between two rotations, in radians.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    // atan2 keeps precision near 0 and pi, where acos of the trace does not
    let rel = a.transpose() * b;
    let sin2 = Vector3::new(rel.m32 - rel.m23, rel.m13 - rel.m31, rel.m21 - rel.m12).norm();
    sin2.atan2(rel.trace() - 1.0)
}

/// Max deviation of `r` from orthonormality and from `det = +1`.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite()) && rotation_defect(r) <= tol
}

/// Splits a rotation into a yaw about +y and a remainder: `r = rot_y(yaw) * rest`.
///
/// The yaw is read from where `r` sends the +z axis in the x-z plane.
pub fn split_yaw(r: &Matrix3<f64>) -> (f64, Matrix3<f64>) {
    let fwd = r * Vector3::z();
    let yaw = if fwd.x.hypot(fwd.z) < 1e-12 {
        // +z maps onto the vertical; fall back to the image of +x
        let side = r * Vector3::x();
        (-side.z).atan2(side.x)
    } else {
        fwd.x.atan2(fwd.z)
    };
    (yaw, rot_y(-yaw) * r)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Spherical interpolation between two rotation matrices.
pub fn slerp(a: &Matrix3<f64>, b: &Matrix3<f64>, t: f64) -> Matrix3<f64> {
    let qa = UnitQuaternion::from_matrix_eps(a, 1e-15, 100, UnitQuaternion::identity());
    let qb = UnitQuaternion::from_matrix_eps(b, 1e-15, 100, UnitQuaternion::identity());
    qa.try_slerp(&qb, t, 1e-12)
        .unwrap_or(qa)
        .to_rotation_matrix()
        .into_inner()
}

/// Re-orthonormalizes a nearly-orthonormal matrix via its polar factor.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
