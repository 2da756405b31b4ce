//! Ground-aware world frame and rigid point registration.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Gravity-aligned metric frame anchored at the first-frame stance point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldFrame {
    pub origin: Vector3<f64>,
    pub axis_x: Vector3<f64>,
    /// Up, opposite to gravity.
    pub axis_y: Vector3<f64>,
    pub axis_z: Vector3<f64>,
    /// Meters per unit; always 1.
    pub scale: f64,
    /// Yaw between this frame and the frame the motion was captured in.
    pub alignment_yaw: f64,
    pub ground_height: f64,
}

impl WorldFrame {
    /// The frame whose axes coincide with the coordinate axes.
    pub fn canonical() -> Self {
        WorldFrame {
            origin: Vector3::zeros(),
            axis_x: Vector3::x(),
            axis_y: Vector3::y(),
            axis_z: Vector3::z(),
            scale: 1.0,
            alignment_yaw: 0.0,
            ground_height: 0.0,
        }
    }

    /// Coordinates of `p` expressed in this frame.
    pub fn express(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = (p - self.origin) / self.scale;
        Vector3::new(d.dot(&self.axis_x), d.dot(&self.axis_y), d.dot(&self.axis_z))
    }

    /// Inverse of [`express`](Self::express).
    pub fn to_parent(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.origin + (self.axis_x * q.x + self.axis_y * q.y + self.axis_z * q.z) * self.scale
    }

    /// Point on the ground plane below the origin, in parent coordinates.
    pub fn ground_point(&self) -> Vector3<f64> {
        self.origin + self.axis_y * self.ground_height
    }

    pub fn axes(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.axis_x, self.axis_y, self.axis_z])
    }

    /// Orthonormality, right-handedness and unit-length check.
    pub fn check(&self, tol: f64) -> bool {
        let unit = [self.axis_x, self.axis_y, self.axis_z]
            .iter()
            .all(|a| (a.norm() - 1.0).abs() <= tol);
        let ortho = self.axis_x.dot(&self.axis_y).abs() <= tol
            && self.axis_y.dot(&self.axis_z).abs() <= tol
            && self.axis_x.dot(&self.axis_z).abs() <= tol;
        let right = (self.axis_x.cross(&self.axis_y) - self.axis_z).norm() <= tol;
        unit && ortho && right && self.scale > 0.0
    }
}

const UNIT_TOL: f64 = 1e-6;
const PARALLEL_TOL: f64 = 1e-3;

/// Builds the world frame: up is against gravity, `x = normalize(up x view)`,
/// `z = x x up`.
pub fn build_world_frame(
    stance_point: Vector3<f64>,
    gravity_dir: Vector3<f64>,
    view_dir: Vector3<f64>,
) -> Result<WorldFrame> {
    for (name, v) in [("gravity", gravity_dir), ("view", view_dir)] {
        if !v.iter().all(|x| x.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::validation(format!("{name} direction must be a unit vector")));
        }
    }
    let cos = gravity_dir.dot(&view_dir).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if !(PARALLEL_TOL..=std::f64::consts::PI - PARALLEL_TOL).contains(&angle) {
        return Err(Error::degenerate("camera view direction is parallel to gravity"));
    }
    let axis_y = -gravity_dir.normalize();
    let mut axis_x = axis_y.cross(&view_dir).normalize();
    let mut axis_z = axis_x.cross(&axis_y);
    if axis_x.cross(&axis_y).dot(&axis_z) < 0.0 {
        axis_x = -axis_x;
        axis_z = axis_x.cross(&axis_y);
    }
    Ok(WorldFrame {
        origin: stance_point,
        axis_x,
        axis_y,
        axis_z,
        scale: 1.0,
        alignment_yaw: 0.0,
        ground_height: 0.0,
    })
}

/// Yaw about the shared up axis taking `a`'s z axis onto `b`'s.
pub fn ground_align_yaw(a: &WorldFrame, b: &WorldFrame) -> Result<f64> {
    let cos = a.axis_y.dot(&b.axis_y).clamp(-1.0, 1.0);
    if cos.acos() > PARALLEL_TOL {
        return Err(Error::validation("frames do not share an up axis"));
    }
    let up = (a.axis_y + b.axis_y).normalize();
    let za = (a.axis_z - up * a.axis_z.dot(&up)).normalize();
    let zb = (b.axis_z - up * b.axis_z.dot(&up)).normalize();
    Ok(za.cross(&zb).dot(&up).atan2(za.dot(&zb)))
}

/// Least-squares similarity fit `dst ~ scale * R * src + T` (column convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    pub rms_residual: f64,
    pub mean_residual: f64,
}

impl RigidFit {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form least-squares registration of corresponding point sets
/// (Umeyama). Reflections are suppressed so `det(R) = +1`.
pub fn estimate_rigid_transform(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<RigidFit> {
    if src.len() != dst.len() {
        return Err(Error::validation(format!(
            "point sets differ in size ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    let m = src.len();
    if m < 3 {
        return Err(Error::degenerate(format!(
            "registration needs at least 3 points, got {m}"
        )));
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("registration input contains non-finite values"));
    }
    let inv_m = 1.0 / m as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() * inv_m;
    let mu_d = dst.iter().sum::<Vector3<f64>>() * inv_m;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut scatter = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        scatter += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov *= inv_m;
    scatter *= inv_m;
    var_s *= inv_m;

    let spread = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= ev[0] * 1e-12 {
        return Err(Error::degenerate("source points are collinear or coincident"));
    }

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    let mut fit = RigidFit {
        rotation,
        translation,
        scale,
        rms_residual: 0.0,
        mean_residual: 0.0,
    };
    let res: Vec<f64> = src.iter().zip(dst).map(|(s, d)| (fit.apply(s) - d).norm()).collect();
    fit.mean_residual = res.iter().sum::<f64>() * inv_m;
    fit.rms_residual = (res.iter().map(|r| r * r).sum::<f64>() * inv_m).sqrt();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{axis_angle_to_matrix, rot_x, rot_y, rotation_defect};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn canonical_alignment() {
        let f = build_world_frame(Vector3::new(1.0, 0.0, 2.0), -Vector3::y(), Vector3::z()).unwrap();
        assert_eq!(f.axis_y, Vector3::y());
        assert_eq!(f.axis_x, Vector3::x());
        assert_eq!(f.axis_z, Vector3::z());
        assert_eq!(f.origin, Vector3::new(1.0, 0.0, 2.0));
        assert_eq!(f.express(&Vector3::new(1.0, 0.0, 2.0)), Vector3::zeros());
    }

    #[test]
    fn tilted_view_projects_onto_ground() {
        // 30 degrees downward
        let c = Vector3::new(0.0, -(30f64.to_radians().sin()), 30f64.to_radians().cos());
        let f = build_world_frame(Vector3::zeros(), -Vector3::y(), c).unwrap();
        assert_eq!(f.axis_y, Vector3::y());
        // Gram-Schmidt oracle: remove the vertical component and renormalize
        let horiz = (c - Vector3::y() * c.dot(&Vector3::y())).normalize();
        assert_abs_diff_eq!(f.axis_z, horiz, epsilon = 1e-15);
        assert!(f.check(1e-12));
    }

    #[test]
    fn parallel_inputs_are_degenerate() {
        let g = -Vector3::y();
        assert!(matches!(
            build_world_frame(Vector3::zeros(), g, g),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            build_world_frame(Vector3::zeros(), g, -g),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            build_world_frame(Vector3::zeros(), g * 2.0, Vector3::z()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn yaw_between_frames() {
        let a = WorldFrame::canonical();
        assert_eq!(ground_align_yaw(&a, &a).unwrap(), 0.0);
        let yawed = |angle: f64| {
            let r = rot_y(angle);
            WorldFrame {
                axis_x: r * a.axis_x,
                axis_z: r * a.axis_z,
                ..a
            }
        };
        assert_abs_diff_eq!(
            ground_align_yaw(&a, &yawed(FRAC_PI_2)).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let phi = rng.random_range(-3.1..3.1);
            assert_abs_diff_eq!(ground_align_yaw(&a, &yawed(phi)).unwrap(), phi, epsilon = 1e-9);
        }
        let tipped = WorldFrame {
            axis_y: rot_x(0.1) * a.axis_y,
            ..a
        };
        assert!(ground_align_yaw(&a, &tipped).is_err());
    }

    #[test]
    fn registration_identity_and_translation() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let fit = estimate_rigid_transform(&src, &src, false).unwrap();
        assert_abs_diff_eq!(fit.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.translation, Vector3::zeros(), epsilon = 1e-12);
        assert_eq!(fit.scale, 1.0);
        let t = Vector3::new(3.0, 0.0, -1.0);
        let dst: Vec<_> = src.iter().map(|p| p + t).collect();
        let fit = estimate_rigid_transform(&src, &dst, false).unwrap();
        assert_abs_diff_eq!(fit.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.translation, t, epsilon = 1e-12);
    }

    #[test]
    fn registration_recovers_rot_y_40() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let src: Vec<Vector3<f64>> = (0..50)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let r = rot_y(40f64.to_radians());
        let t = Vector3::new(0.5, -2.0, 4.0);
        let dst: Vec<_> = src.iter().map(|p| r * p + t).collect();
        let fit = estimate_rigid_transform(&src, &dst, false).unwrap();
        assert!((fit.rotation - r).abs().max() < 1e-9);
        assert!((fit.translation - t).abs().max() < 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn registration_with_scale() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let r = axis_angle_to_matrix(&Vector3::new(0.2, -0.4, 0.9));
        let dst: Vec<_> = src.iter().map(|p| r * p * 2.5 + Vector3::new(1.0, 1.0, 1.0)).collect();
        let fit = estimate_rigid_transform(&src, &dst, true).unwrap();
        assert_abs_diff_eq!(fit.scale, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.rotation, r, epsilon = 1e-12);
    }

    #[test]
    fn registration_rejects_degenerate_sets() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            estimate_rigid_transform(&line, &line, false),
            Err(Error::Degenerate(_))
        ));
        let two = vec![Vector3::zeros(), Vector3::x()];
        assert!(estimate_rigid_transform(&two, &two, false).is_err());
    }

    #[test]
    fn registration_never_reflects() {
        // planar source mirrored through z: best proper rotation, not a reflection
        let src = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.5),
        ];
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let fit = estimate_rigid_transform(&src, &dst, false).unwrap();
        assert!(rotation_defect(&fit.rotation) < 1e-12);
    }

    fn unit() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn built_frames_satisfy_invariants(g in unit(), c in unit()) {
            match build_world_frame(Vector3::zeros(), g, c) {
                Ok(f) => prop_assert!(f.check(1e-9)),
                Err(Error::Degenerate(_)) => prop_assert!(g.dot(&c).abs() > (1e-3f64).cos() - 1e-9),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn registration_is_order_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<Vector3<f64>> = (0..12)
                .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            let r = axis_angle_to_matrix(&Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            let dst: Vec<_> = src.iter().map(|p| r * p + Vector3::new(1.0, -1.0, 0.5) + Vector3::new(rng.random_range(-0.01..0.01), 0.0, 0.0)).collect();
            let a = estimate_rigid_transform(&src, &dst, false).unwrap();
            let mut order: Vec<usize> = (0..src.len()).collect();
            order.reverse();
            order.rotate_left(5);
            let ps: Vec<_> = order.iter().map(|&i| src[i]).collect();
            let pd: Vec<_> = order.iter().map(|&i| dst[i]).collect();
            let b = estimate_rigid_transform(&ps, &pd, false).unwrap();
            prop_assert!((a.rotation - b.rotation).abs().max() < 1e-12);
            prop_assert!((a.translation - b.translation).abs().max() < 1e-12);
        }
    }
}
