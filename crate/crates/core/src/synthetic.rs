//! Analytic test scenes: a cyclic mannequin walk, a camera that sees it and
//! the estimator bundle such a scene would produce.

use std::f64::consts::PI;

use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::body::mannequin::{
    LEFT_ELBOW, LEFT_HIP, LEFT_KNEE, LEFT_SHOULDER, RIGHT_ELBOW, RIGHT_HIP, RIGHT_KNEE, RIGHT_SHOULDER,
};
use crate::body::{chain_global_rotation, skin_vertices, BodyModelAsset, FramePose};
use crate::camera::{CameraModel, CameraTrack};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::hands::{HandEstimate, HandTrack};
use crate::ingest::{write_bundle, EstimatorBundle, DEPTH_DIR};
use crate::motion::MotionSequence;
use crate::rotation::{matrix_to_axis_angle, rot_x, rot_y, rot_z, row_mul};
use crate::trajectory::{Keypoint, Trajectory2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    pub frames: usize,
    /// Frames per gait cycle; the motion is exactly periodic in it.
    pub cycle_frames: usize,
    pub fps: f64,
    /// Mean ground speed, m/s.
    pub speed: f64,
    /// Relative speed swing within a cycle, e.g. 0.3 for +-30 %.
    pub speed_variation: f64,
    /// Walking direction as a yaw about +y; 0 walks along +z.
    pub yaw: f64,
    pub start: Vector3<f64>,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            frames: 120,
            cycle_frames: 30,
            fps: 30.0,
            speed: 1.2,
            speed_variation: 0.3,
            yaw: 0.0,
            start: Vector3::zeros(),
        }
    }
}

/// A straight walk on the mannequin: swinging legs and arms, speed varying
/// twice per cycle. Each frame is lifted so its lowest foot vertex (or
/// lowest vertex, without foot ids) sits exactly on `y = start.y`. Only the
/// body-pose slots of the joints named in [`crate::body::mannequin`] are used.
pub fn walking_motion(asset: &BodyModelAsset, p: &WalkParams) -> Result<MotionSequence> {
    if p.frames == 0 || p.cycle_frames < 2 || !(p.fps > 0.0) {
        return Err(Error::validation(
            "walk needs frames > 0, cycle_frames >= 2 and fps > 0",
        ));
    }
    let slot = |j: usize| {
        asset
            .body_pose_slot(j)
            .ok_or_else(|| Error::validation(format!("asset has no body-pose slot for joint {j}")))
    };
    let (lh, rh, lk, rk) = (slot(LEFT_HIP)?, slot(RIGHT_HIP)?, slot(LEFT_KNEE)?, slot(RIGHT_KNEE)?);
    let (ls, rs, le, re) = (
        slot(LEFT_SHOULDER)?,
        slot(RIGHT_SHOULDER)?,
        slot(LEFT_ELBOW)?,
        slot(RIGHT_ELBOW)?,
    );
    let period = p.cycle_frames as f64 / p.fps;
    let w = 2.0 * PI / period;
    let dir = Vector3::new(p.yaw.sin(), 0.0, p.yaw.cos());
    let frames = (0..p.frames)
        .map(|i| {
            let t = i as f64 / p.fps;
            let phase = w * t;
            let mut pose = FramePose::zeros(asset);
            let along = p.speed * t + p.speed * p.speed_variation * (2.0 * phase).sin() / (2.0 * w);
            pose.translation = p.start + dir * along;
            pose.global_orientation = matrix_to_axis_angle(&rot_y(p.yaw));
            let swing = 0.45 * phase.sin();
            // negative x rotation brings a hanging leg forward (+z)
            pose.body_pose[lh] = Vector3::new(-swing, 0.0, 0.0);
            pose.body_pose[rh] = Vector3::new(swing, 0.0, 0.0);
            pose.body_pose[lk] = Vector3::new(0.35 * (1.0 - phase.cos()).max(0.0) * 0.5 + 0.05, 0.0, 0.0);
            pose.body_pose[rk] = Vector3::new(0.35 * (1.0 + phase.cos()).max(0.0) * 0.5 + 0.05, 0.0, 0.0);
            // arms hang down and swing against the legs
            pose.body_pose[ls] = matrix_to_axis_angle(&(rot_x(swing * 0.8) * rot_z(-1.25)));
            pose.body_pose[rs] = matrix_to_axis_angle(&(rot_x(-swing * 0.8) * rot_z(1.25)));
            pose.body_pose[le] = matrix_to_axis_angle(&rot_y(0.25));
            pose.body_pose[re] = matrix_to_axis_angle(&rot_y(-0.25));
            let mesh = skin_vertices(asset, &pose)?;
            let lowest = match &asset.foot_vertex_ids {
                Some(ids) => ids.iter().map(|&i| mesh.vertices[i].y).fold(f64::MAX, f64::min),
                None => mesh.vertices.iter().map(|v| v.y).fold(f64::MAX, f64::min),
            };
            pose.translation.y += p.start.y - lowest;
            Ok(pose)
        })
        .collect::<Result<_>>()?;
    let mut seq = MotionSequence::new(p.fps, frames);
    seq.extra
        .insert("source".into(), serde_json::Value::from("synthetic-walk"));
    Ok(seq)
}

/// Fixed camera `distance` meters to the side of the walk's start, at chest
/// height, looking at a point `ahead` meters along the walk.
pub fn side_camera(
    p: &WalkParams,
    focal: f64,
    width: u32,
    height: u32,
    distance: f64,
    ahead: f64,
) -> Result<CameraModel> {
    let dir = Vector3::new(p.yaw.sin(), 0.0, p.yaw.cos());
    let side = Vector3::new(dir.z, 0.0, -dir.x);
    let target = p.start + dir * ahead + Vector3::new(0.0, 0.9, 0.0);
    let eye = target + side * distance + Vector3::new(0.0, 0.6, 0.0);
    CameraModel::look_at(focal, width, height, eye, target, Vector3::y())
}

/// A walking subject seen by a fixed side camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub walk: WalkParams,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Camera distance to the side of the walk, meters.
    pub distance: f64,
    /// How far along the walk the camera looks, meters.
    pub ahead: f64,
    /// Include camera-space hand estimates consistent with the body.
    pub hands: bool,
    /// Include a metric depth map of the ground plane.
    pub depth: bool,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            walk: WalkParams::default(),
            focal: 500.0,
            width: 512,
            height: 512,
            distance: 6.0,
            ahead: 2.0,
            hands: true,
            depth: false,
        }
    }
}

/// Estimator outputs for an analytic walk: the motion, joint tracks in
/// world and camera space, the camera and optionally hands and a depth map.
/// `depth_maps` of the returned bundle point into `dir`, which receives the
/// complete bundle.
pub fn write_walking_scene(asset: &BodyModelAsset, p: &SceneParams, dir: &Path) -> Result<EstimatorBundle> {
    let body = walking_motion(asset, &p.walk)?;
    let cam = side_camera(&p.walk, p.focal, p.width, p.height, p.distance, p.ahead)?;
    let mut joints_world = Vec::with_capacity(body.len());
    let mut hands = Vec::with_capacity(body.len());
    for pose in &body.frames {
        joints_world.push(skin_vertices(asset, pose)?.joints);
        if p.hands {
            let mut pair = [None, None];
            for (side, slot) in pair.iter_mut().enumerate() {
                let global = chain_global_rotation(asset, pose, asset.hand_joint_ids[side])?;
                // world orientation is R_w2c * Phi_h in the column convention
                *slot = Some(HandEstimate {
                    side,
                    global_orientation: cam.r_w2c.transpose() * global,
                    hand_pose: pose.hand_pose[side].clone(),
                    confidence: 0.9,
                });
            }
            hands.push(pair);
        }
    }
    let joints_cam = joints_world
        .iter()
        .map(|f| f.iter().map(|j| cam.world_to_camera(j)).collect())
        .collect();
    let mut depth_maps = Vec::new();
    if p.depth {
        let map = ground_depth_map(&cam, p.walk.start.y)?;
        let d = dir.join(DEPTH_DIR);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let path = d.join("frame_000000.pfm");
        map.write_pfm(&path)?;
        depth_maps.push(path);
    }
    let bundle = EstimatorBundle {
        body,
        joints_world: Some(joints_world),
        joints_cam: Some(joints_cam),
        camera: Some(CameraTrack::Single(cam)),
        hands: p.hands.then_some(HandTrack { frames: hands }),
        depth_maps,
    };
    write_bundle(&bundle, dir)?;
    Ok(bundle)
}

/// Camera depth of the plane `y = ground` at every pixel centre, 0 where
/// the ray misses it.
pub fn ground_depth_map(cam: &CameraModel, ground: f64) -> Result<DepthMap> {
    let centre = cam.center();
    let mut meters = Vec::with_capacity(cam.width as usize * cam.height as usize);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam.pixel_ray(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5))?;
            let dir = row_mul(&ray, &cam.r_w2c.transpose());
            let t = (ground - centre.y) / dir.y;
            // ray has camera z = 1, so t is the camera depth
            meters.push(if dir.y < 0.0 && t.is_finite() && t > 0.0 {
                t
            } else {
                0.0
            });
        }
    }
    DepthMap::new(cam.width, cam.height, meters, Some(cam.f1))
}

/// Keypoints of a circular arc on the ground plane `y = start.y`, seen by
/// `cam`: it leaves `start` along `yaw` (0 = +z) and turns by `turn` radians
/// (positive turns left, towards +x for yaw 0) on a circle of `radius`.
/// Keypoints are pinned to evenly spread frames of an `n`-frame sequence.
pub fn arc_trajectory(
    cam: &CameraModel,
    start: Vector3<f64>,
    yaw: f64,
    radius: f64,
    turn: f64,
    keypoints: usize,
    n: usize,
) -> Result<(Trajectory2D, Vec<Vector3<f64>>)> {
    if keypoints < 2 || n < keypoints || !(radius > 0.0) {
        return Err(Error::validation(
            "arc needs >= 2 keypoints, n >= keypoints and a positive radius",
        ));
    }
    let fwd = Vector3::new(yaw.sin(), 0.0, yaw.cos());
    let side = Vector3::new(fwd.z, 0.0, -fwd.x) * turn.signum();
    let centre = start + side * radius;
    let mut kps = Vec::with_capacity(keypoints);
    let mut ground = Vec::with_capacity(keypoints);
    for k in 0..keypoints {
        let a = turn.abs() * k as f64 / (keypoints - 1) as f64;
        let p = centre - side * radius * a.cos() + fwd * radius * a.sin();
        let c = cam.world_to_camera(&p);
        if c.z <= 0.0 {
            return Err(Error::degenerate("arc passes behind the camera"));
        }
        let px = cam.project_camera(&c);
        kps.push(Keypoint {
            frame: Some(((n - 1) * k + (keypoints - 1) / 2) / (keypoints - 1)),
            u: px.x,
            v: px.y,
        });
        ground.push(p);
    }
    Ok((Trajectory2D::new(kps), ground))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::mannequin::mannequin;
    use crate::trajectory::{cumulative_arc_length, Norm};

    #[test]
    fn walk_is_periodic_and_uneven() {
        let asset = mannequin();
        let p = WalkParams {
            frames: 61,
            ..WalkParams::default()
        };
        let seq = walking_motion(&asset, &p).unwrap();
        assert_eq!(seq.len(), 61);
        seq.check_against(&asset).unwrap();
        let a = &seq.frames[3];
        let b = &seq.frames[33];
        for (x, y) in a.body_pose.iter().zip(&b.body_pose) {
            assert!((x - y).norm() < 1e-12);
        }
        let shift = b.translation - a.translation;
        assert!((shift - Vector3::new(0.0, 0.0, 1.2)).norm() < 1e-12);
        let arc = cumulative_arc_length(&seq.translations(), Norm::L2);
        let steps: Vec<f64> = arc.windows(2).map(|w| w[1] - w[0]).collect();
        let (lo, hi) = steps
            .iter()
            .fold((f64::MAX, 0.0f64), |(l, h), s| (l.min(*s), h.max(*s)));
        assert!(hi / lo > 1.5);
    }

    #[test]
    fn walker_stays_near_the_ground_and_faces_forward() {
        let asset = mannequin();
        let seq = walking_motion(&asset, &WalkParams::default()).unwrap();
        let feet = asset.foot_vertex_ids.clone().unwrap();
        for f in seq.frames.iter().step_by(7) {
            let mesh = skin_vertices(&asset, f).unwrap();
            let min = feet.iter().map(|&i| mesh.vertices[i].y).fold(f64::MAX, f64::min);
            assert!(min.abs() < 1e-12, "foot height {min}");
        }
        let cam = side_camera(&WalkParams::default(), 800.0, 512, 512, 6.0, 2.0).unwrap();
        assert!(cam.world_to_camera(&Vector3::new(0.0, 1.0, 0.0)).z > 3.0);
    }

    #[test]
    fn scene_bundle_parses_and_is_consistent() {
        let asset = mannequin();
        let dir = tempfile::tempdir().unwrap();
        let p = SceneParams {
            walk: WalkParams {
                frames: 8,
                ..WalkParams::default()
            },
            width: 64,
            height: 64,
            focal: 60.0,
            depth: true,
            ..SceneParams::default()
        };
        let written = write_walking_scene(&asset, &p, dir.path()).unwrap();
        let parsed = crate::ingest::parse_bundle(dir.path()).unwrap();
        assert_eq!(parsed.depth_maps.len(), 1);
        assert_eq!(parsed.body, written.body);
        let reg = crate::ingest::derive_camera_registration(&parsed).unwrap();
        let truth = parsed.camera.as_ref().unwrap().first();
        assert!((reg.camera.first().r_w2c - truth.r_w2c).abs().max() < 1e-9);
        // hands generated from the body merge back onto the same sequence
        let (merged, report) = crate::hands::merge_hands(
            &parsed.body,
            parsed.hands.as_ref().unwrap(),
            &asset,
            parsed.camera.as_ref().unwrap(),
            0.5,
        )
        .unwrap();
        assert_eq!(report.merged, [8, 8]);
        for (a, b) in merged.frames.iter().zip(&parsed.body.frames) {
            for (x, y) in a.body_pose.iter().zip(&b.body_pose) {
                assert!((x - y).norm() < 1e-9);
            }
        }
        // the depth map holds the ground-plane depth
        let map = DepthMap::read(&parsed.depth_maps[0]).unwrap();
        let px = Vector2::new(40.5, 60.5);
        let d = map.sample(&px, truth.f1).unwrap();
        let world = truth.camera_to_world(&(truth.pixel_ray(&px).unwrap() * d.depth));
        assert!(world.y.abs() < 1e-5, "{}", world.y);
    }

    #[test]
    fn arc_keypoints_project_the_ground_arc() {
        let p = WalkParams::default();
        let cam = side_camera(&p, 500.0, 512, 512, 6.0, 2.0).unwrap();
        let (traj, ground) = arc_trajectory(&cam, p.start, 0.0, 2.0, std::f64::consts::FRAC_PI_2, 5, 120).unwrap();
        let frames: Vec<_> = traj.keypoints.iter().map(|k| k.frame.unwrap()).collect();
        assert_eq!(frames, vec![0, 30, 60, 89, 119]);
        assert!((ground[4] - Vector3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
        traj.validate(512, 512).unwrap();
    }
}
