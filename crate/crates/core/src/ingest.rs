//! Estimator bundles: the files an external motion/camera/hand/depth
//! estimator leaves behind, parsed into the crate's types.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! body.motion.json   world-space MotionSequence (required)
//! joints_world.bin   container, array "joints" N x J x 3 (optional, pairs with joints_cam.bin)
//! joints_cam.bin     container, array "joints" N x J x 3, camera space
//! camera.json        camera object or per-frame list (optional)
//! hands.json         per-frame hand estimates (optional)
//! depth/*.pfm|*.png  per-frame depth maps in name order, each with optional sidecar (optional)
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::body::container::Container;
use crate::body::BodyModelAsset;
use crate::camera::{CameraModel, CameraTrack};
use crate::error::{Error, Result};
use crate::hands::HandTrack;
use crate::motion::MotionSequence;
use crate::world::estimate_rigid_transform;

pub const BODY_FILE: &str = "body.motion.json";
pub const JOINTS_WORLD_FILE: &str = "joints_world.bin";
pub const JOINTS_CAM_FILE: &str = "joints_cam.bin";
pub const CAMERA_FILE: &str = "camera.json";
pub const HANDS_FILE: &str = "hands.json";
pub const DEPTH_DIR: &str = "depth";

/// Per-frame joint positions, `frames[n][j]`, meters.
pub type JointTrack = Vec<Vec<Vector3<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBundle {
    pub body: MotionSequence,
    pub joints_world: Option<JointTrack>,
    pub joints_cam: Option<JointTrack>,
    pub camera: Option<CameraTrack>,
    pub hands: Option<HandTrack>,
    /// Depth map files in frame order.
    pub depth_maps: Vec<PathBuf>,
}

impl EstimatorBundle {
    pub fn frame_count(&self) -> usize {
        self.body.len()
    }

    /// Cross-track consistency: every present track has the body's frame
    /// count, joint tracks agree in J, values are finite.
    pub fn validate(&self) -> Result<()> {
        self.body.validate().map_err(|e| e.context(BODY_FILE))?;
        let n = self.body.len();
        let count = |what: &str, m: usize| -> Result<()> {
            if m != n {
                Err(Error::validation(format!(
                    "{what} has {m} frames but {BODY_FILE} has {n}"
                )))
            } else {
                Ok(())
            }
        };
        match (&self.joints_world, &self.joints_cam) {
            (Some(w), Some(c)) => {
                count(JOINTS_WORLD_FILE, w.len())?;
                count(JOINTS_CAM_FILE, c.len())?;
                let jw = w.first().map_or(0, Vec::len);
                let jc = c.first().map_or(0, Vec::len);
                if jw != jc {
                    return Err(Error::validation(format!(
                        "{JOINTS_WORLD_FILE} has {jw} joints, {JOINTS_CAM_FILE} has {jc}"
                    )));
                }
                for (name, t) in [(JOINTS_WORLD_FILE, w), (JOINTS_CAM_FILE, c)] {
                    if t.iter().any(|f| f.len() != jw) {
                        return Err(Error::validation(format!("{name}: joint count varies across frames")));
                    }
                    if t.iter().flatten().any(|p| p.iter().any(|v| !v.is_finite())) {
                        return Err(Error::validation(format!("{name}: non-finite joint position")));
                    }
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::validation(format!(
                    "{JOINTS_WORLD_FILE} and {JOINTS_CAM_FILE} must be given together"
                )))
            }
        }
        if let Some(CameraTrack::PerFrame(v)) = &self.camera {
            count(CAMERA_FILE, v.len())?;
        }
        if let Some(h) = &self.hands {
            count(HANDS_FILE, h.len())?;
        }
        if !self.depth_maps.is_empty() && self.depth_maps.len() != 1 {
            count(DEPTH_DIR, self.depth_maps.len())?;
        }
        Ok(())
    }

    /// Checks the tracks against a body asset: pose dimensions and, when
    /// present, joint count.
    pub fn check_against(&self, asset: &BodyModelAsset) -> Result<()> {
        self.body.check_against(asset).map_err(|e| e.context(BODY_FILE))?;
        if let Some(w) = &self.joints_world {
            let j = w.first().map_or(0, Vec::len);
            if j != asset.joint_count() {
                return Err(Error::validation(format!(
                    "{JOINTS_WORLD_FILE} has {j} joints, the asset has {}",
                    asset.joint_count()
                )));
            }
        }
        Ok(())
    }

    /// Depth map file for frame `n`; a single map serves every frame.
    pub fn depth_map_for(&self, n: usize) -> Option<&Path> {
        match self.depth_maps.len() {
            0 => None,
            1 => Some(&self.depth_maps[0]),
            _ => self.depth_maps.get(n).map(PathBuf::as_path),
        }
    }
}

fn read_joints(path: &Path) -> Result<JointTrack> {
    let c = Container::read(path)?;
    let (shape, data) = c
        .f64_array("joints", &[None, None, Some(3)])
        .map_err(|e| Error::parse(path, e))?
        .ok_or_else(|| Error::parse(path, "missing array 'joints' (N x J x 3)"))?;
    let (n, j) = (shape[0], shape[1]);
    Ok((0..n)
        .map(|f| {
            (0..j)
                .map(|k| Vector3::from_column_slice(&data[(f * j + k) * 3..][..3]))
                .collect()
        })
        .collect())
}

fn write_joints(path: &Path, track: &JointTrack) -> Result<()> {
    let n = track.len();
    let j = track.first().map_or(0, Vec::len);
    let mut c = Container::new();
    c.meta.insert("content".into(), "joint positions".into());
    c.push_f64(
        "joints",
        vec![n, j, 3],
        track.iter().flatten().flat_map(|p| [p.x, p.y, p.z]).collect(),
    );
    c.write(path)
}

/// Parses and validates a bundle directory; any problem is an error naming
/// the file, never a partially filled bundle.
pub fn parse_bundle(dir: &Path) -> Result<EstimatorBundle> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "bundle directory not found"),
        ));
    }
    let body_path = dir.join(BODY_FILE);
    if !body_path.exists() {
        return Err(Error::validation(format!(
            "bundle {} has no {BODY_FILE}",
            dir.display()
        )));
    }
    let body = MotionSequence::read(&body_path)?;
    let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
    let joints_world = opt(JOINTS_WORLD_FILE).map(|p| read_joints(&p)).transpose()?;
    let joints_cam = opt(JOINTS_CAM_FILE).map(|p| read_joints(&p)).transpose()?;
    let camera = opt(CAMERA_FILE).map(|p| CameraTrack::read(&p)).transpose()?;
    let hands = opt(HANDS_FILE).map(|p| HandTrack::read(&p)).transpose()?;
    let mut depth_maps = Vec::new();
    if let Some(d) = opt(DEPTH_DIR) {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
            if matches!(ext.as_deref(), Some("pfm") | Some("png")) {
                depth_maps.push(p);
            }
        }
        depth_maps.sort();
    }
    let bundle = EstimatorBundle {
        body,
        joints_world,
        joints_cam,
        camera,
        hands,
        depth_maps,
    };
    bundle
        .validate()
        .map_err(|e| e.context(&format!("bundle {}", dir.display())))?;
    Ok(bundle)
}

/// Writes a bundle in the documented layout. Depth maps are copied into
/// `depth/` under their own file names, sidecars included.
pub fn write_bundle(bundle: &EstimatorBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bundle.body.write(&dir.join(BODY_FILE))?;
    if let (Some(w), Some(c)) = (&bundle.joints_world, &bundle.joints_cam) {
        write_joints(&dir.join(JOINTS_WORLD_FILE), w)?;
        write_joints(&dir.join(JOINTS_CAM_FILE), c)?;
    }
    if let Some(cam) = &bundle.camera {
        cam.write(&dir.join(CAMERA_FILE))?;
    }
    if let Some(h) = &bundle.hands {
        h.write(&dir.join(HANDS_FILE))?;
    }
    if !bundle.depth_maps.is_empty() {
        let d = dir.join(DEPTH_DIR);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for src in &bundle.depth_maps {
            let name = src
                .file_name()
                .ok_or_else(|| Error::validation(format!("depth map path {} has no file name", src.display())))?;
            let dst = d.join(name);
            if dst != *src {
                std::fs::copy(src, &dst).map_err(|e| Error::io(src, e))?;
                let side = crate::depth::sidecar_path(src);
                if side.exists() {
                    std::fs::copy(&side, crate::depth::sidecar_path(&dst)).map_err(|e| Error::io(&side, e))?;
                }
            }
        }
    }
    Ok(())
}

/// Result of registering world joints onto camera-space joints.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRegistration {
    pub camera: CameraTrack,
    /// Mean point residual after registration, meters (per frame for a
    /// per-frame track, else one entry).
    pub mean_residual: Vec<f64>,
}

fn register(world: &[Vector3<f64>], cam: &[Vector3<f64>], base: &CameraModel) -> Result<(CameraModel, f64)> {
    let fit = estimate_rigid_transform(world, cam, false)?;
    // column fit x_cam = R x_world + T is the row form x_world R^T + T
    let r_w2c: Matrix3<f64> = fit.rotation.transpose();
    let out = CameraModel {
        r_w2c,
        t_w2c: fit.translation,
        ..base.clone()
    };
    Ok((out, fit.mean_residual))
}

/// Fills the bundle camera's extrinsics from the two joint tracks. A single
/// camera is registered on all frames pooled; a per-frame track frame by
/// frame. Intrinsics come from `camera.json`.
pub fn derive_camera_registration(bundle: &EstimatorBundle) -> Result<CameraRegistration> {
    let (Some(w), Some(c)) = (&bundle.joints_world, &bundle.joints_cam) else {
        return Err(Error::validation("camera registration needs both joint tracks"));
    };
    let cam = bundle
        .camera
        .as_ref()
        .ok_or_else(|| Error::validation(format!("camera registration needs intrinsics from {CAMERA_FILE}")))?;
    match cam {
        CameraTrack::Single(base) => {
            let pw: Vec<_> = w.iter().flatten().copied().collect();
            let pc: Vec<_> = c.iter().flatten().copied().collect();
            let (out, res) = register(&pw, &pc, base).map_err(|e| e.context("joint registration"))?;
            Ok(CameraRegistration {
                camera: CameraTrack::Single(out),
                mean_residual: vec![res],
            })
        }
        CameraTrack::PerFrame(v) => {
            let mut cams = Vec::with_capacity(v.len());
            let mut res = Vec::with_capacity(v.len());
            for (n, base) in v.iter().enumerate() {
                let (out, r) =
                    register(&w[n], &c[n], base).map_err(|e| e.context(&format!("joint registration, frame {n}")))?;
                cams.push(out);
                res.push(r);
            }
            Ok(CameraRegistration {
                camera: CameraTrack::PerFrame(cams),
                mean_residual: res,
            })
        }
    }
}
