//! End-to-end trajectory edit: ingest, world frame, trajectory lifting,
//! speed alignment, headings, rigid retargeting, foot grounding.
//!
//! The stages are exposed separately so an interactive front end can stop
//! after lifting and planning; [`run_edit`] chains all of them.
//!
//! Planning happens in the ground-aware world frame `W` (y up, ground at
//! `y = 0`). Bundle motion is expressed in `W`; a bank clip's own
//! coordinates are taken to be `W` directly, since the edit replaces its
//! placement anyway. The edited sequence is written back in the bundle's
//! world coordinates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::bank::{loop_clip, retarget_shape, MotionClip};
use crate::body::{skin_vertices, BodyModelAsset, MeshFrame};
use crate::camera::{CameraModel, CameraTrack};
use crate::config::Config;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::hands::{merge_hands, MergeReport};
use crate::ingest::{derive_camera_registration, EstimatorBundle};
use crate::motion::MotionSequence;
use crate::render::{render_sequence, RenderManifest, RenderMesh, RenderOptions};
use crate::rotation::{axis_angle_to_matrix, matrix_to_axis_angle};
use crate::trajectory::{
    align_speed, cumulative_arc_length, derive_headings, ground_intersect, heading_matrix, interpolate_keypoints,
    unproject_point, RetargetTransform, SpeedAlignment, Trajectory2D,
};
use crate::world::{build_world_frame, WorldFrame};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSource {
    /// Extrinsics registered from the world and camera joint tracks.
    Registration,
    /// Extrinsics taken from the camera file as given.
    CameraFile,
}

/// A parsed bundle placed in its world frame.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Bundle body with hand estimates merged.
    pub body: MotionSequence,
    pub camera: CameraTrack,
    pub camera_source: CameraSource,
    pub registration_residual: Option<Vec<f64>>,
    pub world: WorldFrame,
    pub hands: Option<MergeReport>,
    pub depth_maps: Vec<PathBuf>,
}

fn lowest(mesh: &MeshFrame, asset: &BodyModelAsset, up: &Vector3<f64>) -> Vector3<f64> {
    let ids: Box<dyn Iterator<Item = usize>> = match &asset.foot_vertex_ids {
        Some(ids) => Box::new(ids.iter().copied()),
        None => Box::new(0..mesh.vertices.len()),
    };
    ids.map(|i| mesh.vertices[i])
        .min_by(|a, b| a.dot(up).total_cmp(&b.dot(up)))
        .expect("asset has vertices")
}

impl Scene {
    pub fn new(asset: &BodyModelAsset, bundle: &EstimatorBundle, cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        bundle.validate().map_err(|e| e.context("ingest"))?;
        bundle.check_against(asset).map_err(|e| e.context("ingest"))?;
        let (camera, camera_source, registration_residual) = if bundle.joints_world.is_some() {
            let reg = derive_camera_registration(bundle).map_err(|e| e.context("world frame"))?;
            (reg.camera, CameraSource::Registration, Some(reg.mean_residual))
        } else {
            let cam = bundle
                .camera
                .clone()
                .ok_or_else(|| Error::validation("ingest: the bundle has neither joint tracks nor a camera file"))?;
            (cam, CameraSource::CameraFile, None)
        };
        let (body, hands) = match &bundle.hands {
            Some(h) => {
                let (b, r) = merge_hands(&bundle.body, h, asset, &camera, cfg.hands.min_confidence)
                    .map_err(|e| e.context("hand merge"))?;
                (b, Some(r))
            }
            None => (bundle.body.clone(), None),
        };
        let up = -cfg.gravity();
        let first = skin_vertices(asset, &body.frames[0]).map_err(|e| e.context("frame 0"))?;
        let root = first.joints[asset.root()];
        let foot = lowest(&first, asset, &up);
        let stance = root - up * (root - foot).dot(&up);
        let world = build_world_frame(stance, cfg.gravity(), camera.first().view_direction())
            .map_err(|e| e.context("world frame"))?;
        Ok(Scene {
            body,
            camera,
            camera_source,
            registration_residual,
            world,
            hands,
            depth_maps: bundle.depth_maps.clone(),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.body.len()
    }

    /// The camera the trajectory is drawn over.
    pub fn draw_camera(&self) -> &CameraModel {
        self.camera.first()
    }

    fn depth_map_for(&self, n: usize) -> Option<&Path> {
        match self.depth_maps.len() {
            0 => None,
            1 => Some(&self.depth_maps[0]),
            _ => self.depth_maps.get(n).map(PathBuf::as_path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipReport {
    pub id: String,
    pub source_frames: usize,
    pub looped_frames: usize,
    pub blend_window: usize,
}

/// The motion being re-routed, with its root path.
#[derive(Debug, Clone)]
pub struct SourceMotion {
    pub sequence: MotionSequence,
    /// Maps the sequence's coordinates into `W`.
    pub frame: WorldFrame,
    /// Root joint positions in the sequence's coordinates.
    pub roots: Vec<Vector3<f64>>,
    pub clip: Option<ClipReport>,
}

impl SourceMotion {
    pub fn from_scene(asset: &BodyModelAsset, scene: &Scene) -> Result<Self> {
        Ok(SourceMotion {
            roots: root_path(asset, &scene.body)?,
            sequence: scene.body.clone(),
            frame: scene.world,
            clip: None,
        })
    }

    /// A bank clip looped to `n` frames and given the scene subject's shape.
    pub fn from_clip(asset: &BodyModelAsset, scene: &Scene, clip: &MotionClip, n: usize, blend: usize) -> Result<Self> {
        let ctx = |e: Error| e.context(&format!("clip {}", clip.id));
        clip.validate().map_err(ctx)?;
        let looped = loop_clip(&clip.sequence, n, blend).map_err(ctx)?;
        let subject = &scene.body.frames[0];
        let shaped = retarget_shape(
            &MotionClip {
                sequence: looped,
                ..clip.clone()
            },
            &subject.shape,
            subject.child_factor,
        )
        .map_err(ctx)?;
        let mut sequence = shaped.sequence;
        sequence.check_against(asset).map_err(ctx)?;
        sequence.fps = scene.body.fps;
        sequence.coordinate_frame = scene.body.coordinate_frame.clone();
        Ok(SourceMotion {
            roots: root_path(asset, &sequence)?,
            sequence,
            frame: WorldFrame::canonical(),
            clip: Some(ClipReport {
                id: clip.id.clone(),
                source_frames: clip.sequence.len(),
                looped_frames: n,
                blend_window: blend,
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn roots_in_world_frame(&self) -> Vec<Vector3<f64>> {
        self.roots.iter().map(|r| self.frame.express(r)).collect()
    }
}

fn root_path(asset: &BodyModelAsset, seq: &MotionSequence) -> Result<Vec<Vector3<f64>>> {
    let root = asset.root();
    seq.frames
        .par_iter()
        .enumerate()
        .map(|(n, p)| {
            Ok(skin_vertices(asset, p)
                .map_err(|e| e.context(&format!("frame {n}")))?
                .joints[root])
        })
        .collect()
}

/// The drawn trajectory lifted onto the ground of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPath {
    pub pixels: Vec<Vector2<f64>>,
    /// One point per frame on `y = 0` of `W`.
    pub points: Vec<Vector3<f64>>,
    /// Frames lifted with a depth map; the rest used the ground plane.
    pub depth_frames: Vec<usize>,
}

/// Interpolates the keypoints to `n` frames and lifts every pixel: through
/// the frame's depth map (calibrated by its focal) when available and
/// enabled, otherwise by intersecting the viewing ray with the ground.
pub fn lift_trajectory(scene: &Scene, traj: &Trajectory2D, n: usize, cfg: &Config) -> Result<LiftedPath> {
    let cam = scene.draw_camera();
    traj.validate(cam.width, cam.height)
        .map_err(|e| e.context("trajectory"))?;
    let pixels = interpolate_keypoints(traj, n).map_err(|e| e.context("trajectory"))?;
    let mut maps: BTreeMap<&Path, DepthMap> = BTreeMap::new();
    if cfg.trajectory.use_depth {
        for i in 0..n {
            if let Some(p) = scene.depth_map_for(i) {
                if !maps.contains_key(p) {
                    maps.insert(p, DepthMap::read(p)?);
                }
            }
        }
    }
    let mut points = Vec::with_capacity(n);
    let mut depth_frames = Vec::new();
    for (i, px) in pixels.iter().enumerate() {
        let map = scene.depth_map_for(i).and_then(|p| maps.get(p));
        let from_depth = match map {
            Some(m) => {
                let at = Vector2::new(
                    px.x * m.width as f64 / cam.width as f64,
                    px.y * m.height as f64 / cam.height as f64,
                );
                match m.sample(&at, cam.f1) {
                    Ok(s) => Some(cam.camera_to_world(&unproject_point(px, cam, &s)?)),
                    Err(Error::Degenerate(_)) => None,
                    Err(e) => return Err(e.context(&format!("depth, frame {i}"))),
                }
            }
            None => None,
        };
        let world = match from_depth {
            Some(p) => {
                depth_frames.push(i);
                p
            }
            None => ground_intersect(px, cam, &scene.world).map_err(|e| e.context(&format!("trajectory frame {i}")))?,
        };
        let mut q = scene.world.express(&world);
        q.y = 0.0;
        points.push(q);
    }
    Ok(LiftedPath {
        pixels,
        points,
        depth_frames,
    })
}

/// Where the root goes and which way it faces, per frame, in `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    /// Source root path in `W`.
    pub source_roots: Vec<Vector3<f64>>,
    /// Cumulative ground distance of the source root.
    pub original_arc: Vec<f64>,
    pub alignment: SpeedAlignment,
    /// Path angle from +x, smoothed.
    pub headings: Vec<f64>,
    /// Row-form heading rotation per frame.
    pub heading_rotations: Vec<Matrix3<f64>>,
    pub held_frames: Vec<usize>,
    pub all_static: bool,
    /// Target root per frame: aligned ground position at the source height.
    pub target_roots: Vec<Vector3<f64>>,
}

pub fn plan_trajectory(source: &SourceMotion, lifted: &LiftedPath, cfg: &Config) -> Result<TrajectoryPlan> {
    let t = &cfg.trajectory;
    let source_roots = source.roots_in_world_frame();
    if source_roots.len() != lifted.points.len() {
        return Err(Error::validation(format!(
            "trajectory has {} frames, the motion has {}",
            lifted.points.len(),
            source_roots.len()
        )));
    }
    let ground: Vec<Vector3<f64>> = source_roots.iter().map(|r| Vector3::new(r.x, 0.0, r.z)).collect();
    let original_arc = cumulative_arc_length(&ground, t.norm);
    let alignment =
        align_speed(&lifted.points, &original_arc, t.speed_options()).map_err(|e| e.context("speed alignment"))?;
    let h =
        derive_headings(&alignment.positions, t.heading_window, t.heading_eps).map_err(|e| e.context("headings"))?;
    let heading_rotations = h
        .angles
        .iter()
        .map(|&a| heading_matrix(t.heading_mode.angle(a)))
        .collect();
    let target_roots = alignment
        .positions
        .iter()
        .zip(&source_roots)
        .map(|(g, r)| Vector3::new(g.x, r.y, g.z))
        .collect();
    Ok(TrajectoryPlan {
        source_roots,
        original_arc,
        alignment,
        headings: h.angles,
        heading_rotations,
        held_frames: h.held_frames,
        all_static: h.all_static,
        target_roots,
    })
}

/// The per-frame rigid edits in `W`. A fully static path moves the root
/// without turning the body.
pub fn frame_edits(source: &SourceMotion, plan: &TrajectoryPlan, cfg: &Config) -> Vec<RetargetTransform> {
    let axes_t = source.frame.axes().transpose();
    (0..plan.target_roots.len())
        .map(|n| {
            let (src, dst) = (plan.source_roots[n], plan.target_roots[n]);
            if plan.all_static {
                return RetargetTransform::translation_only(src, dst);
            }
            let phi_w = axes_t * axis_angle_to_matrix(&source.sequence.frames[n].global_orientation);
            RetargetTransform::new(
                &matrix_to_axis_angle(&phi_w),
                src,
                &plan.heading_rotations[n],
                dst,
                cfg.trajectory.orientation_removal,
            )
        })
        .collect()
}

/// Applies the edits to the source poses, writing the result in the scene's
/// world coordinates, then grounds the feet. Returns the edited sequence
/// and the vertical correction applied to each frame.
pub fn apply_plan(
    asset: &BodyModelAsset,
    scene: &Scene,
    source: &SourceMotion,
    plan: &TrajectoryPlan,
    cfg: &Config,
) -> Result<(MotionSequence, Vec<f64>)> {
    let world = &scene.world;
    let a = world.axes();
    let src_axes_t = source.frame.axes().transpose();
    let edits = frame_edits(source, plan, cfg);
    let mut out = source.sequence.clone();
    for (n, pose) in out.frames.iter_mut().enumerate() {
        let e = &edits[n];
        let phi_w = src_axes_t * axis_angle_to_matrix(&pose.global_orientation);
        pose.global_orientation = matrix_to_axis_angle(&(a * e.column_rotation() * phi_w));
        let root = world.to_parent(&e.apply(&plan.source_roots[n]));
        pose.translation += root - source.roots[n];
    }
    let mut shifts = vec![0.0; out.len()];
    if cfg.trajectory.ground {
        let mut frames: Vec<Vec<Vector3<f64>>> = out
            .frames
            .par_iter()
            .enumerate()
            .map(|(n, p)| {
                let mesh = skin_vertices(asset, p).map_err(|e| e.context(&format!("frame {n}")))?;
                Ok(mesh.vertices.iter().map(|v| world.express(v)).collect())
            })
            .collect::<Result<_>>()?;
        shifts = crate::trajectory::ground_feet(
            &mut frames,
            asset.foot_vertex_ids.as_deref(),
            cfg.trajectory.ground_window,
        )
        .map_err(|e| e.context("foot grounding"))?;
        for (pose, s) in out.frames.iter_mut().zip(&shifts) {
            pose.translation += world.axis_y * *s;
        }
    }
    Ok((out, shifts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldFrameReport {
    pub origin: [f64; 3],
    pub axis_x: [f64; 3],
    pub axis_y: [f64; 3],
    pub axis_z: [f64; 3],
}

impl From<&WorldFrame> for WorldFrameReport {
    fn from(w: &WorldFrame) -> Self {
        let a = |v: Vector3<f64>| [v.x, v.y, v.z];
        WorldFrameReport {
            origin: a(w.origin),
            axis_x: a(w.axis_x),
            axis_y: a(w.axis_y),
            axis_z: a(w.axis_z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub keypoints: usize,
    pub depth_frames: Vec<usize>,
    pub ground_frames: Vec<usize>,
    pub rescale_factor: f64,
    /// Cumulative ground distance of the source root, meters.
    pub original_arc_m: Vec<f64>,
    /// The profile the aligned path reproduces (rescaled original).
    pub target_arc_m: Vec<f64>,
    /// Measured cumulative distance of the aligned path.
    pub aligned_arc_m: Vec<f64>,
    pub end_shortfall_m: f64,
    pub clamped_frames: Vec<usize>,
    pub held_heading_frames: Vec<usize>,
    pub all_static: bool,
    pub headings_rad: Vec<f64>,
}

/// Everything a run resolved and measured. Holds no timestamps or paths, so
/// identical inputs give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditReport {
    pub version: u32,
    pub config: Config,
    pub frame_count: usize,
    pub camera_source: CameraSource,
    pub registration_mean_residual_m: Option<Vec<f64>>,
    pub world_frame: WorldFrameReport,
    pub motion_source: &'static str,
    pub clip: Option<ClipReport>,
    pub hands: Option<MergeReport>,
    pub trajectory: TrajectoryReport,
    /// Frames with a held heading or a clamped speed step.
    pub degenerate_frames: Vec<usize>,
    pub foot_shift_m: Vec<f64>,
}

impl EditReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Optional clip substitution for [`run_edit`].
#[derive(Debug, Clone, Copy)]
pub struct ClipChoice<'a> {
    pub clip: &'a MotionClip,
    /// Looped length; `None` means the scene's frame count.
    pub frames: Option<usize>,
    /// `None` means the configured blend window.
    pub blend_window: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub sequence: MotionSequence,
    pub report: EditReport,
    pub lifted: LiftedPath,
    pub plan: TrajectoryPlan,
}

/// Source motion for a scene, from the bundle body or a looped clip.
pub fn source_motion(
    asset: &BodyModelAsset,
    scene: &Scene,
    clip: Option<ClipChoice>,
    cfg: &Config,
) -> Result<SourceMotion> {
    match clip {
        None => SourceMotion::from_scene(asset, scene),
        Some(c) => {
            let n = c.frames.unwrap_or(scene.frame_count());
            if let Some(m) = scene.camera.len() {
                if m != n {
                    return Err(Error::validation(format!(
                        "clip looped to {n} frames but the camera track has {m}"
                    )));
                }
            }
            SourceMotion::from_clip(
                asset,
                scene,
                c.clip,
                n,
                c.blend_window.unwrap_or(cfg.looping.blend_window),
            )
        }
    }
}

pub fn run_edit(
    asset: &BodyModelAsset,
    bundle: &EstimatorBundle,
    traj: &Trajectory2D,
    clip: Option<ClipChoice>,
    cfg: &Config,
) -> Result<EditOutcome> {
    let scene = Scene::new(asset, bundle, cfg)?;
    edit_scene(asset, &scene, traj, clip, cfg)
}

/// [`run_edit`] on an already prepared scene.
pub fn edit_scene(
    asset: &BodyModelAsset,
    scene: &Scene,
    traj: &Trajectory2D,
    clip: Option<ClipChoice>,
    cfg: &Config,
) -> Result<EditOutcome> {
    let source = source_motion(asset, scene, clip, cfg)?;
    edit_source(asset, scene, &source, traj, cfg)
}

/// [`run_edit`] with the source motion already chosen.
pub fn edit_source(
    asset: &BodyModelAsset,
    scene: &Scene,
    source: &SourceMotion,
    traj: &Trajectory2D,
    cfg: &Config,
) -> Result<EditOutcome> {
    let lifted = lift_trajectory(scene, traj, source.len(), cfg)?;
    let plan = plan_trajectory(source, &lifted, cfg)?;
    let (sequence, shifts) = apply_plan(asset, scene, source, &plan, cfg)?;
    let report = build_report(scene, source, traj, &lifted, &plan, shifts, cfg);
    Ok(EditOutcome {
        sequence,
        report,
        lifted,
        plan,
    })
}

fn build_report(
    scene: &Scene,
    source: &SourceMotion,
    traj: &Trajectory2D,
    lifted: &LiftedPath,
    plan: &TrajectoryPlan,
    shifts: Vec<f64>,
    cfg: &Config,
) -> EditReport {
    let n = lifted.points.len();
    let a = &plan.alignment;
    let ground_frames = (0..n).filter(|i| !lifted.depth_frames.contains(i)).collect();
    let mut degenerate: Vec<usize> = plan.held_frames.iter().chain(&a.clamped_frames).copied().collect();
    degenerate.sort_unstable();
    degenerate.dedup();
    EditReport {
        version: REPORT_VERSION,
        config: *cfg,
        frame_count: n,
        camera_source: scene.camera_source,
        registration_mean_residual_m: scene.registration_residual.clone(),
        world_frame: (&scene.world).into(),
        motion_source: if source.clip.is_some() { "clip" } else { "bundle" },
        clip: source.clip.clone(),
        // hand estimates belong to the captured body, not to a substituted clip
        hands: if source.clip.is_some() {
            None
        } else {
            scene.hands.clone()
        },
        trajectory: TrajectoryReport {
            keypoints: traj.keypoints.len(),
            depth_frames: lifted.depth_frames.clone(),
            ground_frames,
            rescale_factor: a.rescale_factor,
            original_arc_m: plan.original_arc.clone(),
            target_arc_m: a.target_arc.clone(),
            aligned_arc_m: cumulative_arc_length(&a.positions, cfg.trajectory.norm),
            end_shortfall_m: a.end_shortfall,
            clamped_frames: a.clamped_frames.clone(),
            held_heading_frames: plan.held_frames.clone(),
            all_static: plan.all_static,
            headings_rad: plan.headings.clone(),
        },
        degenerate_frames: degenerate,
        foot_shift_m: shifts,
    }
}

pub const EDITED_FILE: &str = "edited.motion.json";
pub const REPORT_FILE: &str = "report.json";
pub const EDIT_CAMERA_FILE: &str = "camera.json";

/// Writes the edited sequence, its report and the camera it was edited
/// against into `dir`. Returns the three paths in that order.
pub fn write_edit_outputs(outcome: &EditOutcome, camera: &CameraTrack, dir: &Path) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = [dir.join(EDITED_FILE), dir.join(REPORT_FILE), dir.join(EDIT_CAMERA_FILE)];
    outcome.sequence.write(&paths[0])?;
    std::fs::write(&paths[1], outcome.report.to_json_string()).map_err(|e| Error::io(&paths[1], e))?;
    camera.write(&paths[2])?;
    Ok(paths)
}

/// Skins every frame of `seq`, in parallel.
pub fn skin_sequence(asset: &BodyModelAsset, seq: &MotionSequence) -> Result<Vec<MeshFrame>> {
    seq.check_against(asset)?;
    seq.frames
        .par_iter()
        .enumerate()
        .map(|(n, p)| skin_vertices(asset, p).map_err(|e| e.context(&format!("frame {n}"))))
        .collect()
}

/// Skins and renders a sequence into `out_dir`.
pub fn render_motion(
    asset: &BodyModelAsset,
    seq: &MotionSequence,
    cams: &CameraTrack,
    opts: &RenderOptions,
    out_dir: &Path,
) -> Result<RenderManifest> {
    let frames: Vec<Vec<Vector3<f64>>> = skin_sequence(asset, seq)?.into_iter().map(|m| m.vertices).collect();
    render_sequence(&frames, &RenderMesh::from_asset(asset), cams, opts, out_dir)
}

/// Image-space bones of a posed skeleton: one segment per joint with a
/// parent, skipped when either end is behind the camera.
pub fn project_skeleton(asset: &BodyModelAsset, joints: &[Vector3<f64>], cam: &CameraModel) -> Vec<[[f64; 2]; 2]> {
    let px = |p: &Vector3<f64>| {
        let c = cam.world_to_camera(p);
        (c.z > crate::camera::DEFAULT_NEAR).then(|| {
            let q = cam.project_camera(&c);
            [q.x, q.y]
        })
    };
    asset
        .joint_parents
        .iter()
        .enumerate()
        .filter_map(|(j, parent)| Some([px(&joints[(*parent)?])?, px(&joints[j])?]))
        .collect()
}
