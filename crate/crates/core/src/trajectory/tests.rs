use super::*;
use crate::rotation::{is_rotation, rot_x, rot_z};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn kp(frame: Option<usize>, u: f64, v: f64) -> Keypoint {
    Keypoint { frame, u, v }
}

fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

#[test]
fn interpolation_between_pinned_keypoints_is_linear() {
    let t = Trajectory2D::new(vec![kp(Some(0), 0.0, 0.0), kp(Some(10), 100.0, 0.0)]);
    let px = interpolate_keypoints(&t, 11).unwrap();
    for (n, p) in px.iter().enumerate() {
        assert_abs_diff_eq!(p.x, 10.0 * n as f64, epsilon = 1e-12);
        assert_eq!(p.y, 0.0);
    }
}

#[test]
fn unpinned_keypoints_spread_uniformly() {
    let t = Trajectory2D::new(vec![kp(None, 0.0, 0.0), kp(None, 10.0, 20.0), kp(None, 20.0, 0.0)]);
    assert_eq!(t.keypoint_frames(5).unwrap(), vec![0.0, 2.0, 4.0]);
    let px = interpolate_keypoints(&t, 5).unwrap();
    assert_eq!(px[2], Vector2::new(10.0, 20.0));
    assert_abs_diff_eq!(px[1], Vector2::new(5.0, 10.0), epsilon = 1e-12);
}

#[test]
fn mixed_pinning_and_clamped_ends() {
    let t = Trajectory2D::new(vec![kp(Some(2), 0.0, 0.0), kp(None, 5.0, 0.0), kp(Some(6), 10.0, 0.0)]);
    assert_eq!(t.keypoint_frames(10).unwrap(), vec![2.0, 4.0, 6.0]);
    let px = interpolate_keypoints(&t, 10).unwrap();
    assert_eq!(px[0], Vector2::new(0.0, 0.0));
    assert_eq!(px[9], Vector2::new(10.0, 0.0));
    assert_abs_diff_eq!(px[3].x, 2.5, epsilon = 1e-12);
}

#[test]
fn keypoint_validation() {
    let t = Trajectory2D::new(vec![kp(Some(3), 0.0, 0.0), kp(Some(3), 1.0, 0.0)]);
    assert!(matches!(t.validate(64, 64), Err(Error::Validation(_))));
    let t = Trajectory2D::new(vec![kp(None, 0.0, 0.0), kp(None, 64.0, 0.0)]);
    assert!(t.validate(64, 64).is_err());
    let t = Trajectory2D::new(vec![kp(None, 0.0, 0.0)]);
    assert!(interpolate_keypoints(&t, 5).is_err());
    let t = Trajectory2D::new(vec![kp(Some(0), 0.0, 0.0), kp(Some(9), 1.0, 0.0)]);
    assert!(interpolate_keypoints(&t, 5).is_err());
}

#[test]
fn keypoint_json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.json");
    let t = Trajectory2D::new(vec![kp(Some(0), 1.5, 2.5), kp(None, 3.0, 4.0)]);
    t.write(&path).unwrap();
    assert_eq!(Trajectory2D::read(&path).unwrap(), t);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.matches("frame").count(), 1);
}

fn test_camera() -> CameraModel {
    CameraModel::simple(500.0, 640, 480, Matrix3::identity(), Vector3::zeros()).unwrap()
}

#[test]
fn unprojection_scales_by_focal_ratio() {
    let cam = test_camera();
    let c = Vector2::new(320.0, 240.0);
    let p = unproject_point(&c, &cam, &DepthSample { depth: 2.0, f2: 500.0 }).unwrap();
    assert_abs_diff_eq!(p, v3(0.0, 0.0, 2.0), epsilon = 1e-12);
    let p = unproject_point(&c, &cam, &DepthSample { depth: 2.0, f2: 1000.0 }).unwrap();
    assert_abs_diff_eq!(p, v3(0.0, 0.0, 4.0), epsilon = 1e-12);
    let p = unproject_point(
        &Vector2::new(370.0, 240.0),
        &cam,
        &DepthSample { depth: 2.0, f2: 500.0 },
    )
    .unwrap();
    assert_abs_diff_eq!(p, v3(0.2, 0.0, 2.0), epsilon = 1e-12);
    assert!(unproject_point(&c, &cam, &DepthSample { depth: 0.0, f2: 500.0 }).is_err());
    assert!(unproject_point(&c, &cam, &DepthSample { depth: 1.0, f2: -1.0 }).is_err());
}

#[test]
fn unprojection_reprojects_to_the_pixel() {
    let cam = test_camera();
    let px = Vector2::new(100.25, 400.75);
    let p = unproject_point(&px, &cam, &DepthSample { depth: 3.0, f2: 700.0 }).unwrap();
    assert_abs_diff_eq!(cam.project_camera(&p), px, epsilon = 1e-9);
}

#[test]
fn ground_intersection_lands_on_the_plane() {
    let cam = CameraModel::look_at(500.0, 640, 480, v3(0.0, 2.0, -4.0), v3(0.0, 0.0, 0.0), Vector3::y()).unwrap();
    let frame = WorldFrame::canonical();
    let p = ground_intersect(&Vector2::new(320.0, 240.0), &cam, &frame).unwrap();
    assert_abs_diff_eq!(p, v3(0.0, 0.0, 0.0), epsilon = 1e-9);
    let p = ground_intersect(&Vector2::new(400.0, 300.0), &cam, &frame).unwrap();
    assert_eq!(p.y, 0.0);
    let back = cam.project_camera(&cam.world_to_camera(&p));
    assert_abs_diff_eq!(back, Vector2::new(400.0, 300.0), epsilon = 1e-6);
    // rays above the horizon never reach the ground
    let level = CameraModel::look_at(500.0, 640, 480, v3(0.0, 1.0, -4.0), v3(0.0, 1.0, 0.0), Vector3::y()).unwrap();
    assert!(matches!(
        ground_intersect(&Vector2::new(320.0, 100.0), &level, &frame),
        Err(Error::Degenerate(_))
    ));
    assert!(matches!(
        ground_intersect(&Vector2::new(320.0, 240.0), &level, &frame),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn arc_length_examples() {
    let pts = [v3(0.0, 0.0, 0.0), v3(1.0, 1.0, 0.0), v3(1.0, 1.0, 1.0)];
    assert_eq!(cumulative_arc_length(&pts, Norm::L1), vec![0.0, 2.0, 3.0]);
    let l2 = cumulative_arc_length(&pts, Norm::L2);
    assert_abs_diff_eq!(l2[1], 2f64.sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(l2[2], 2f64.sqrt() + 1.0, epsilon = 1e-15);
    assert_eq!(cumulative_arc_length(&[], Norm::L1), Vec::<f64>::new());
    assert_eq!(cumulative_arc_length(&pts[..1], Norm::L2), vec![0.0]);
}

#[test]
fn speed_alignment_on_a_line_matches_closed_form() {
    // uneven drawn spacing along +x, evenly timed original motion
    let edited: Vec<_> = [0.0, 0.1, 0.15, 0.9, 1.7, 2.0]
        .iter()
        .map(|&x| v3(x, 0.0, 0.0))
        .collect();
    let orig = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    for norm in [Norm::L1, Norm::L2] {
        let out = align_speed(&edited, &orig, SpeedAlignOptions { norm, rescale: true }).unwrap();
        assert_abs_diff_eq!(out.rescale_factor, 2.0, epsilon = 1e-12);
        for (n, p) in out.positions.iter().enumerate() {
            assert_abs_diff_eq!(*p, v3(0.4 * n as f64, 0.0, 0.0), epsilon = 1e-12);
        }
    }
}

#[test]
fn eased_profile_samples_the_line() {
    // unit-speed line of length 2, original motion eases in quadratically
    let n = 21;
    let edited: Vec<_> = (0..n).map(|i| v3(0.0, 0.0, 0.1 * i as f64)).collect();
    let orig: Vec<f64> = (0..n).map(|i| 2.0 * (i as f64 / 20.0).powi(2)).collect();
    let out = align_speed(
        &edited,
        &orig,
        SpeedAlignOptions {
            norm: Norm::L2,
            rescale: true,
        },
    )
    .unwrap();
    for (p, d) in out.positions.iter().zip(&orig) {
        assert_abs_diff_eq!(*p, v3(0.0, 0.0, *d), epsilon = 1e-12);
    }
}

#[test]
fn identical_profiles_keep_positions() {
    let edited = vec![
        v3(0.0, 0.0, 0.0),
        v3(0.3, 0.0, 0.1),
        v3(0.5, 0.0, 0.6),
        v3(0.2, 0.0, 1.0),
    ];
    let orig = cumulative_arc_length(&edited, Norm::L1);
    let out = align_speed(&edited, &orig, SpeedAlignOptions::default()).unwrap();
    assert_eq!(out.positions, edited);
    assert_eq!(out.rescale_factor, 1.0);
}

#[test]
fn static_original_and_degenerate_edit() {
    let edited = vec![v3(1.0, 0.0, 0.0), v3(2.0, 0.0, 0.0), v3(3.0, 0.0, 0.0)];
    let out = align_speed(&edited, &[0.5, 0.5, 0.5], SpeedAlignOptions::default()).unwrap();
    assert!(out.positions.iter().all(|p| *p == edited[0]));
    let still = vec![v3(1.0, 0.0, 0.0); 3];
    assert!(matches!(
        align_speed(&still, &[0.0, 1.0, 2.0], SpeedAlignOptions::default()),
        Err(Error::Degenerate(_))
    ));
    assert!(matches!(
        align_speed(&edited, &[0.0, 2.0, 1.0], SpeedAlignOptions::default()),
        Err(Error::Validation(_))
    ));
    assert!(align_speed(&edited, &[0.0, 1.0], SpeedAlignOptions::default()).is_err());
}

#[test]
fn without_rescale_frames_clamp_at_the_end() {
    let edited: Vec<_> = (0..5).map(|i| v3(i as f64 * 0.25, 0.0, 0.0)).collect();
    let orig = [0.0, 0.5, 1.0, 1.5, 2.0];
    let out = align_speed(
        &edited,
        &orig,
        SpeedAlignOptions {
            norm: Norm::L2,
            rescale: false,
        },
    )
    .unwrap();
    assert_eq!(out.rescale_factor, 1.0);
    assert_abs_diff_eq!(out.positions[1], v3(0.5, 0.0, 0.0), epsilon = 1e-12);
    assert_abs_diff_eq!(out.positions[2], v3(1.0, 0.0, 0.0), epsilon = 1e-12);
    assert_eq!(out.positions[4], v3(1.0, 0.0, 0.0));
    assert_eq!(out.clamped_frames, vec![3, 4]);
}

fn circle_path(n: usize, radius: f64, sweep: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| {
            let a = sweep * i as f64 / (n - 1) as f64;
            v3(radius * a.cos(), 0.0, radius * a.sin())
        })
        .collect()
}

/// Independent check: every consecutive chord equals the rescaled original
/// increment, every frame lies on the edited polyline, and frames advance.
fn check_alignment(edited: &[Vector3<f64>], orig: &[f64], norm: Norm, out: &SpeedAlignment, tol: f64) {
    let k = out.rescale_factor;
    let scale = orig[orig.len() - 1].max(1e-3);
    let mut lost = 0.0;
    for n in 1..edited.len() {
        let chord = norm.of(&(out.positions[n] - out.positions[n - 1]));
        let want = k * (orig[n] - orig[n - 1]);
        if out.clamped_frames.contains(&n) {
            assert!(chord <= want + tol * scale * k.max(1.0));
            lost += want - chord;
        } else {
            assert!(
                (chord - want).abs() <= tol * scale * k.max(1.0),
                "frame {n}: chord {chord} vs {want}"
            );
        }
    }
    assert!((lost - out.end_shortfall).abs() <= tol * scale * k.max(1.0));
    let mut last_param = 0.0;
    for p in &out.positions {
        let (seg, t, d) = closest_on_polyline(edited, p);
        assert!(d <= 1e-9, "frame off the path by {d}");
        let param = seg as f64 + t;
        assert!(param >= last_param - 1e-9);
        last_param = param;
    }
    assert_abs_diff_eq!(
        out.positions[edited.len() - 1],
        edited[edited.len() - 1],
        epsilon = 1e-9
    );
}

fn closest_on_polyline(path: &[Vector3<f64>], p: &Vector3<f64>) -> (usize, f64, f64) {
    let mut best = (0, 0.0, f64::INFINITY);
    for s in 0..path.len() - 1 {
        let d = path[s + 1] - path[s];
        let len2 = d.norm_squared();
        let t = if len2 == 0.0 {
            0.0
        } else {
            ((p - path[s]).dot(&d) / len2).clamp(0.0, 1.0)
        };
        let dist = (path[s] + d * t - p).norm();
        if dist < best.2 - 1e-12 {
            best = (s, t, dist);
        }
    }
    best
}

#[test]
fn curved_path_chords_match_original_increments() {
    let edited = circle_path(40, 2.0, 1.5 * PI);
    // accelerating original motion
    let orig: Vec<f64> = (0..40).map(|i| 0.002 * (i * i) as f64).collect();
    for norm in [Norm::L1, Norm::L2] {
        let out = align_speed(&edited, &orig, SpeedAlignOptions { norm, rescale: true }).unwrap();
        check_alignment(&edited, &orig, norm, &out, 1e-9);
        assert!(out.end_shortfall < 1e-12);
    }
}

#[test]
fn hairpin_paths_report_any_final_shortfall() {
    let edited = vec![
        v3(0.0, 0.0, 0.0),
        v3(1.0, 0.0, 0.0),
        v3(1.0, 0.0, 0.05),
        v3(0.1, 0.0, 0.05),
        v3(0.1, 0.0, 0.3),
    ];
    let orig = [0.0, 0.3, 0.9, 1.0, 1.6];
    for norm in [Norm::L1, Norm::L2] {
        let out = align_speed(&edited, &orig, SpeedAlignOptions { norm, rescale: true }).unwrap();
        check_alignment(&edited, &orig, norm, &out, 1e-9);
    }
}

#[test]
fn heading_matrix_form() {
    assert_eq!(heading_matrix(0.0), Matrix3::identity());
    let r = heading_matrix(FRAC_PI_2);
    assert_abs_diff_eq!(
        r,
        Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
        epsilon = 1e-15
    );
    assert!(is_rotation(&heading_matrix(2.1), 1e-12));
    // as a column rotation this is a yaw of -psi
    assert_abs_diff_eq!(heading_matrix(0.7), rot_y(-0.7), epsilon = 1e-15);
}

#[test]
fn headings_follow_motion_direction() {
    let along_x: Vec<_> = (0..5).map(|i| v3(i as f64, 0.0, 0.0)).collect();
    let h = derive_headings(&along_x, 1, HEADING_EPS).unwrap();
    assert!(h.angles.iter().all(|&a| a == 0.0));
    let along_z: Vec<_> = (0..5).map(|i| v3(0.0, 0.3, i as f64)).collect();
    let h = derive_headings(&along_z, 3, HEADING_EPS).unwrap();
    assert!(h.angles.iter().all(|&a| (a - FRAC_PI_2).abs() < 1e-15));
}

#[test]
fn headings_hold_over_pauses_and_static_paths() {
    let pts = vec![
        v3(0.0, 0.0, 0.0),
        v3(1.0, 0.0, 0.0),
        v3(1.0, 0.0, 0.0),
        v3(1.0, 0.0, 1.0),
    ];
    let h = derive_headings(&pts, 1, HEADING_EPS).unwrap();
    assert_eq!(h.angles, vec![0.0, 0.0, 0.0, FRAC_PI_2]);
    assert_eq!(h.held_frames, vec![2]);
    // leading pause takes the first real heading
    let pts = vec![v3(0.0, 0.0, 0.0), v3(0.0, 0.0, 0.0), v3(0.0, 0.0, 1.0)];
    let h = derive_headings(&pts, 1, HEADING_EPS).unwrap();
    assert_eq!(h.angles, vec![FRAC_PI_2; 3]);
    let h = derive_headings(&[v3(1.0, 2.0, 3.0); 4], 5, HEADING_EPS).unwrap();
    assert!(h.all_static);
    assert!(derive_headings(&pts[..1], 1, HEADING_EPS).is_err());
    assert!(derive_headings(&pts, 0, HEADING_EPS).is_err());
}

#[test]
fn headings_unwrap_across_the_branch_cut() {
    // clockwise loop passes through +-pi
    let pts = circle_path(60, 1.0, -2.0 * PI);
    let h = derive_headings(&pts, 5, HEADING_EPS).unwrap();
    for w in h.angles.windows(2) {
        assert!((w[1] - w[0]).abs() < 0.3);
    }
    assert!(h.angles[0] - h.angles[59] > 5.0);
}

#[test]
fn box_filter_shrinks_at_the_ends() {
    assert_eq!(box_filter(&[0.0, 3.0, 6.0, 9.0], 3), vec![1.5, 3.0, 6.0, 7.5]);
    assert_eq!(box_filter(&[1.0, 2.0], 1), vec![1.0, 2.0]);
}

#[test]
fn retarget_matches_column_oracle() {
    let phi = v3(0.2, -1.1, 0.4);
    let src_root = v3(0.5, 0.9, -0.3);
    let dst_root = v3(2.0, 0.9, 1.0);
    let psi = 0.8;
    let edit = RetargetTransform::new(&phi, src_root, &heading_matrix(psi), dst_root, OrientationRemoval::Full);
    let rot = axis_angle_to_matrix(&phi);
    let mesh = vec![v3(0.1, 0.2, 0.3), src_root, v3(-1.0, 0.5, 2.0)];
    let out = retarget_vertices(&mesh, &edit);
    for (p, q) in mesh.iter().zip(&out) {
        let want = rot_y(psi) * rot.transpose() * (p - src_root) + dst_root;
        assert_abs_diff_eq!(*q, want, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(out[1], dst_root, epsilon = 1e-15);
    // the body's orientation after the edit is the heading yaw alone
    assert_abs_diff_eq!(edit.column_rotation() * rot, rot_y(psi), epsilon = 1e-12);
}

#[test]
fn yaw_only_removal_keeps_lean() {
    let lean = rot_x(0.3);
    let rot = rot_y(1.2) * lean;
    let phi = crate::rotation::matrix_to_axis_angle(&rot);
    let edit = RetargetTransform::new(
        &phi,
        Vector3::zeros(),
        &heading_matrix(0.0),
        Vector3::zeros(),
        OrientationRemoval::YawOnly,
    );
    assert_abs_diff_eq!(edit.column_rotation() * rot, lean, epsilon = 1e-12);
    let full = RetargetTransform::new(
        &phi,
        Vector3::zeros(),
        &heading_matrix(0.0),
        Vector3::zeros(),
        OrientationRemoval::Full,
    );
    assert_abs_diff_eq!(full.column_rotation() * rot, Matrix3::identity(), epsilon = 1e-12);
}

#[test]
fn translation_only_edit_shifts_rigidly() {
    let edit = RetargetTransform::translation_only(v3(1.0, 0.0, 0.0), v3(0.0, 0.0, 2.0));
    assert_eq!(edit.apply(&v3(1.0, 1.0, 0.0)), v3(0.0, 1.0, 2.0));
}

fn frames_with_min(mins: &[f64]) -> Vec<Vec<Vector3<f64>>> {
    mins.iter()
        .map(|&m| vec![v3(0.0, m, 0.0), v3(1.0, m + 0.5, 0.0), v3(0.0, m + 1.7, 1.0)])
        .collect()
}

#[test]
fn grounding_examples() {
    let mut frames = frames_with_min(&[0.05; 6]);
    let shift = ground_feet(&mut frames, None, 3).unwrap();
    assert!(shift.iter().all(|&s| (s + 0.05).abs() < 1e-15));
    assert!(frames.iter().all(|f| f[0].y == 0.0));

    let mut mins = vec![0.0; 11];
    mins[5] = -0.02;
    let mut frames = frames_with_min(&mins);
    let shift = ground_feet(&mut frames, None, 5).unwrap();
    for (i, s) in shift.iter().enumerate() {
        let want = if (3..=7).contains(&i) { 0.02 } else { 0.0 };
        assert_abs_diff_eq!(*s, want, epsilon = 1e-15);
    }

    let mut frames = frames_with_min(&[0.0; 4]);
    let before = frames.clone();
    assert_eq!(ground_feet(&mut frames, None, 3).unwrap(), vec![0.0; 4]);
    assert_eq!(frames, before);

    // restricted to a foot vertex set
    let mut frames = frames_with_min(&[0.1, 0.1]);
    ground_feet(&mut frames, Some(&[1]), 1).unwrap();
    assert_abs_diff_eq!(frames[0][1].y, 0.0, epsilon = 1e-15);

    assert!(ground_feet(&mut frames, None, 2).is_err());
    assert!(ground_feet(&mut frames, Some(&[9]), 1).is_err());
    assert!(ground_feet(&mut [], None, 1).is_err());
}

#[test]
fn grounding_handles_monotone_drift() {
    let mins: Vec<f64> = (0..12).map(|i| 0.01 * i as f64).collect();
    let mut frames = frames_with_min(&mins);
    ground_feet(&mut frames, None, 3).unwrap();
    let again = ground_feet(&mut frames.clone(), None, 3).unwrap();
    assert!(again.iter().all(|&s| s == 0.0));
}

proptest! {
    #[test]
    fn prop_interpolation_hits_keypoints(
        raw in prop::collection::vec((0.0..600.0f64, 0.0..400.0f64), 2..8),
        extra in 0usize..30,
    ) {
        let n = raw.len() + extra;
        let t = Trajectory2D::new(raw.iter().map(|&(u, v)| kp(None, u, v)).collect());
        let px = interpolate_keypoints(&t, n).unwrap();
        let frames = t.keypoint_frames(n).unwrap();
        for (f, k) in frames.iter().zip(&t.keypoints) {
            if f.fract() == 0.0 {
                prop_assert_eq!(px[*f as usize], Vector2::new(k.u, k.v));
            }
        }
        prop_assert_eq!(px[0], Vector2::new(raw[0].0, raw[0].1));
        prop_assert_eq!(px[n - 1], Vector2::new(raw[raw.len() - 1].0, raw[raw.len() - 1].1));
    }

    #[test]
    fn prop_arc_length_is_monotone(pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..30)) {
        let pts: Vec<_> = pts.into_iter().map(|(x, y, z)| v3(x, y, z)).collect();
        for norm in [Norm::L1, Norm::L2] {
            let arc = cumulative_arc_length(&pts, norm);
            prop_assert_eq!(arc[0], 0.0);
            prop_assert!(arc.windows(2).all(|w| w[1] >= w[0]));
        }
        let l1 = cumulative_arc_length(&pts, Norm::L1);
        let l2 = cumulative_arc_length(&pts, Norm::L2);
        prop_assert!(l2[l2.len() - 1] <= l1[l1.len() - 1] + 1e-12);
    }

    #[test]
    fn prop_arc_length_invariances(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..20),
        aa in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
        shift in (-9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64),
    ) {
        let pts: Vec<_> = pts.into_iter().map(|(x, y, z)| v3(x, y, z)).collect();
        let r = axis_angle_to_matrix(&v3(aa.0, aa.1, aa.2));
        let t = v3(shift.0, shift.1, shift.2);
        let moved: Vec<_> = pts.iter().map(|p| r * p + t).collect();
        let shifted: Vec<_> = pts.iter().map(|p| p + t).collect();
        let (a, b) = (cumulative_arc_length(&pts, Norm::L2), cumulative_arc_length(&moved, Norm::L2));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x));
        }
        let (a, b) = (cumulative_arc_length(&pts, Norm::L1), cumulative_arc_length(&shifted, Norm::L1));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x));
        }
    }

    #[test]
    fn prop_alignment_reproduces_increments(
        start in -PI..PI,
        segs in prop::collection::vec((-0.15..0.15f64, 0.01..0.3f64), 4..20),
        steps in prop::collection::vec(0.0..0.1f64, 0..30),
        l2 in any::<bool>(),
    ) {
        // smooth drawn path: bounded turning, total turn below pi
        let mut heading = start;
        let mut pts = vec![v3(0.0, 0.0, 0.0)];
        for (turn, len) in &segs {
            heading += turn;
            let p = pts[pts.len() - 1];
            pts.push(p + v3(heading.cos(), 0.0, heading.sin()) * *len);
        }
        let n = pts.len();
        let mut steps = steps;
        steps.resize(n - 1, 0.05);
        let norm = if l2 { Norm::L2 } else { Norm::L1 };
        let mut orig = vec![0.0];
        for s in &steps { orig.push(orig[orig.len() - 1] + s); }
        prop_assume!(orig[n - 1] > 1e-3);
        let out = align_speed(&pts, &orig, SpeedAlignOptions { norm, rescale: true }).unwrap();
        check_alignment(&pts, &orig, norm, &out, 1e-9);
        prop_assert!(out.end_shortfall < 1e-9);
    }

    #[test]
    fn prop_headings_tangent_without_smoothing(pts in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 2..30)) {
        let pts: Vec<_> = pts.into_iter().map(|(x, z)| v3(x, 0.0, z)).collect();
        let h = derive_headings(&pts, 1, HEADING_EPS).unwrap();
        for n in 1..pts.len() {
            let d = pts[n] - pts[n - 1];
            if d.x.hypot(d.z) >= HEADING_EPS {
                let dir = Vector2::new(h.angles[n].cos(), h.angles[n].sin());
                let want = Vector2::new(d.x, d.z).normalize();
                prop_assert!((dir - want).norm() < 1e-9);
            }
        }
        for w in h.angles.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= PI + 1e-12);
        }
    }

    #[test]
    fn prop_retarget_is_rigid(
        phi in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
        psi in -PI..PI,
        pts in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 2..10),
        yaw_only in any::<bool>(),
    ) {
        let removal = if yaw_only { OrientationRemoval::YawOnly } else { OrientationRemoval::Full };
        let edit = RetargetTransform::new(&v3(phi.0, phi.1, phi.2), v3(0.1, 0.9, 0.0), &heading_matrix(psi), v3(3.0, 0.9, -1.0), removal);
        prop_assert!(is_rotation(&edit.column_rotation(), 1e-9));
        let pts: Vec<_> = pts.into_iter().map(|(x, y, z)| v3(x, y, z)).collect();
        let out = retarget_vertices(&pts, &edit);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let a = (pts[i] - pts[j]).norm();
                let b = (out[i] - out[j]).norm();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        let _ = rot_z(0.0);
    }

    #[test]
    fn prop_grounding_is_idempotent(mins in prop::collection::vec(-0.5..0.5f64, 1..25), half in 0usize..4) {
        let window = 2 * half + 1;
        let mut frames = frames_with_min(&mins);
        ground_feet(&mut frames, None, window).unwrap();
        let n = frames.len();
        let after: Vec<f64> = frames.iter().map(|f| f[0].y).collect();
        prop_assert!(after.iter().all(|&m| m >= 0.0));
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            prop_assert!(after[lo..=hi].contains(&0.0));
        }
        let snapshot = frames.clone();
        let again = ground_feet(&mut frames, None, window).unwrap();
        prop_assert!(again.iter().all(|&s| s == 0.0));
        prop_assert_eq!(frames, snapshot);
    }
}
