//! Per-session state and the computations behind each endpoint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use worldmotion::bank::{MotionBank, MotionClip};
use worldmotion::body::{skin_vertices, BodyModelAsset};
use worldmotion::config::Config;
use worldmotion::ingest::parse_bundle;
use worldmotion::motion::MotionSequence;
use worldmotion::pipeline::{
    edit_source, lift_trajectory, plan_trajectory, project_skeleton, source_motion, ClipChoice, EditOutcome, Scene,
    SourceMotion,
};
use worldmotion::render::{render_guidance, MapType, RenderMesh};
use worldmotion::trajectory::{Keypoint, Trajectory2D};
use worldmotion::{Error, Result};

use crate::api::{ClipSummary, TrajectoryResponse, TrajectoryWarnings, API_VERSION};

/// Cached entries are dropped wholesale past this many.
const CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
pub struct ClipSelection {
    pub clip: Arc<MotionClip>,
    pub frames: usize,
    pub blend_window: usize,
    /// Hash of the clip's frames, so a replaced bank clip is a new state.
    pub digest: String,
}

/// Mutable session state; guarded by the session's async mutex.
pub struct Session {
    pub id: String,
    pub bundle: PathBuf,
    pub config: Config,
    pub version: u64,
    pub scene: Arc<Scene>,
    pub source: Arc<SourceMotion>,
    pub trajectory: Option<Trajectory2D>,
    pub clip: Option<ClipSelection>,
}

/// What a snapshot file holds: enough to rebuild the session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub api_version: u32,
    pub id: String,
    pub bundle: PathBuf,
    pub config: Config,
    pub version: u64,
    pub keypoints: Option<Vec<Keypoint>>,
    pub clip: Option<SnapshotClip>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotClip {
    pub id: String,
    pub frames: usize,
    pub blend_window: usize,
}

/// Derived results keyed by content hash. Entries are never modified.
#[derive(Default)]
pub struct Cache {
    edits: HashMap<String, Arc<EditOutcome>>,
    frames: HashMap<String, Arc<RenderedFrame>>,
}

pub struct RenderedFrame {
    pub pngs: HashMap<MapType, String>,
    pub skeleton: Vec<[[f64; 2]; 2]>,
}

pub struct SessionCell {
    pub state: Arc<tokio::sync::Mutex<Session>>,
    pub cache: Mutex<Cache>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn clip_digest(seq: &MotionSequence) -> String {
    sha256_hex(seq.to_json_string().as_bytes())
}

impl Session {
    pub fn open(asset: &BodyModelAsset, id: String, bundle: &Path, config: Config) -> Result<Session> {
        let b = parse_bundle(bundle)?;
        let scene = Scene::new(asset, &b, &config)?;
        let source = source_motion(asset, &scene, None, &config)?;
        Ok(Session {
            id,
            bundle: bundle.to_path_buf(),
            config,
            version: 1,
            scene: Arc::new(scene),
            source: Arc::new(source),
            trajectory: None,
            clip: None,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.source.len()
    }

    /// Content hash of everything a derived result depends on.
    pub fn state_hash(&self) -> String {
        let value = serde_json::json!({
            "bundle": self.bundle,
            "config": self.config,
            "keypoints": self.trajectory.as_ref().map(|t| &t.keypoints),
            "clip": self.clip.as_ref().map(|c| (&c.clip.id, c.frames, c.blend_window, &c.digest)),
        });
        sha256_hex(value.to_string().as_bytes())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            api_version: API_VERSION,
            id: self.id.clone(),
            bundle: self.bundle.clone(),
            config: self.config,
            version: self.version,
            keypoints: self.trajectory.as_ref().map(|t| t.keypoints.clone()),
            clip: self.clip.as_ref().map(|c| SnapshotClip {
                id: c.clip.id.clone(),
                frames: c.frames,
                blend_window: c.blend_window,
            }),
        }
    }

    pub fn restore(asset: &BodyModelAsset, bank: Option<&Path>, snap: &Snapshot) -> Result<Session> {
        let mut s = Session::open(asset, snap.id.clone(), &snap.bundle, snap.config)?;
        if let Some(c) = &snap.clip {
            let bank = bank.ok_or_else(|| Error::validation("snapshot selects a clip but no bank is configured"))?;
            s.select_clip(asset, bank, Some(&c.id), Some(c.frames), Some(c.blend_window))?;
        }
        s.trajectory = snap.keypoints.clone().map(Trajectory2D::new);
        s.version = snap.version;
        Ok(s)
    }

    pub fn clip_summary(&self) -> Option<ClipSummary> {
        self.clip.as_ref().map(|c| ClipSummary {
            id: c.clip.id.clone(),
            tags: c.clip.tags.clone(),
            loopable: c.clip.loopable,
            fps: c.clip.sequence.fps,
            source_frames: c.clip.sequence.len(),
            looped_frames: c.frames,
            blend_window: c.blend_window,
        })
    }

    /// Switches the source motion; `None` returns to the bundle body.
    pub fn select_clip(
        &mut self,
        asset: &BodyModelAsset,
        bank: &Path,
        id: Option<&str>,
        frames: Option<usize>,
        blend: Option<usize>,
    ) -> Result<()> {
        let Some(id) = id else {
            self.source = Arc::new(source_motion(asset, &self.scene, None, &self.config)?);
            self.clip = None;
            return Ok(());
        };
        let bank = MotionBank::open(bank)?;
        if bank.info(id).is_none() {
            return Err(Error::validation(format!("no clip {id:?} in the bank")));
        }
        let clip = bank.load(id)?;
        let frames = frames.unwrap_or(self.scene.frame_count());
        let blend_window = blend.unwrap_or(self.config.looping.blend_window);
        let choice = ClipChoice {
            clip: &clip,
            frames: Some(frames),
            blend_window: Some(blend_window),
        };
        let source = source_motion(asset, &self.scene, Some(choice), &self.config)?;
        self.source = Arc::new(source);
        self.clip = Some(ClipSelection {
            digest: clip_digest(&clip.sequence),
            clip: Arc::new(clip),
            frames,
            blend_window,
        });
        Ok(())
    }
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Lifts and plans `traj` against the session's source motion.
pub fn plan_response(s: &Session, traj: &Trajectory2D, version: u64) -> Result<TrajectoryResponse> {
    let n = s.frame_count();
    let lifted = lift_trajectory(&s.scene, traj, n, &s.config)?;
    let plan = plan_trajectory(&s.source, &lifted, &s.config)?;
    let world = &s.scene.world;
    let cam = s.scene.draw_camera();
    let a = &plan.alignment;
    let aligned: Vec<Vector3<f64>> = a.positions.iter().map(|p| world.to_parent(p)).collect();
    let mut degenerate: Vec<usize> = plan.held_frames.iter().chain(&a.clamped_frames).copied().collect();
    degenerate.sort_unstable();
    degenerate.dedup();
    Ok(TrajectoryResponse {
        api_version: API_VERSION,
        version,
        frame_count: n,
        pixels: lifted.pixels.iter().map(|p| [p.x, p.y]).collect(),
        world_path: lifted.points.iter().map(|p| arr3(&world.to_parent(p))).collect(),
        aligned_pixels: aligned
            .iter()
            .map(|p| {
                let q = cam.project_camera(&cam.world_to_camera(p));
                [q.x, q.y]
            })
            .collect(),
        aligned_path: aligned.iter().map(arr3).collect(),
        headings_rad: plan.headings.clone(),
        rescale_factor: a.rescale_factor,
        warnings: TrajectoryWarnings {
            degenerate_frames: degenerate,
            clamped_frames: a.clamped_frames.clone(),
            held_heading_frames: plan.held_frames.clone(),
            ground_fallback_frames: (0..n).filter(|i| !lifted.depth_frames.contains(i)).collect(),
            all_static: plan.all_static,
            end_shortfall_m: a.end_shortfall,
        },
    })
}

/// Inputs of a derived computation, copied out of the session so the lock
/// is not held while computing.
#[derive(Clone)]
pub struct Frozen {
    pub hash: String,
    pub version: u64,
    pub scene: Arc<Scene>,
    pub source: Arc<SourceMotion>,
    pub trajectory: Option<Trajectory2D>,
    pub config: Config,
}

impl Frozen {
    pub fn of(s: &Session) -> Frozen {
        Frozen {
            hash: s.state_hash(),
            version: s.version,
            scene: s.scene.clone(),
            source: s.source.clone(),
            trajectory: s.trajectory.clone(),
            config: s.config,
        }
    }
}

impl SessionCell {
    pub fn new(s: Session) -> Self {
        SessionCell {
            state: Arc::new(tokio::sync::Mutex::new(s)),
            cache: Mutex::new(Cache::default()),
        }
    }

    /// The edited motion for a frozen state, computed at most once.
    pub fn edit(&self, asset: &BodyModelAsset, f: &Frozen) -> Result<Arc<EditOutcome>> {
        if let Some(hit) = self.cache.lock().expect("cache lock").edits.get(&f.hash) {
            return Ok(hit.clone());
        }
        let traj = f
            .trajectory
            .as_ref()
            .ok_or_else(|| Error::validation("the session has no trajectory yet"))?;
        let out = Arc::new(edit_source(asset, &f.scene, &f.source, traj, &f.config)?);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.edits.len() >= CACHE_LIMIT {
            cache.edits.clear();
        }
        Ok(cache.edits.entry(f.hash.clone()).or_insert(out).clone())
    }

    /// The motion a preview shows: the edit when a trajectory is set, else
    /// the bundle body as captured.
    fn preview_motion(&self, asset: &BodyModelAsset, f: &Frozen) -> Result<MotionSequence> {
        if f.trajectory.is_some() {
            return Ok(self.edit(asset, f)?.sequence.clone());
        }
        if f.source.clip.is_some() {
            return Err(Error::validation("a clip preview needs a trajectory to place it"));
        }
        Ok(f.scene.body.clone())
    }

    /// Renders frames `[start, end)` at `width x height`, in parallel,
    /// reusing cached frames.
    pub fn preview(
        &self,
        asset: &BodyModelAsset,
        f: &Frozen,
        frames: std::ops::Range<usize>,
        width: u32,
        height: u32,
    ) -> Result<Vec<Arc<RenderedFrame>>> {
        let key = |n: usize| format!("{}:{n}:{width}x{height}", f.hash);
        let cached: Vec<Option<Arc<RenderedFrame>>> = {
            let cache = self.cache.lock().expect("cache lock");
            frames.clone().map(|n| cache.frames.get(&key(n)).cloned()).collect()
        };
        if cached.iter().all(Option::is_some) {
            return Ok(cached.into_iter().flatten().collect());
        }
        let motion = self.preview_motion(asset, f)?;
        let mesh = RenderMesh::from_asset(asset);
        let rendered: Vec<Arc<RenderedFrame>> = frames
            .clone()
            .zip(cached)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(n, hit)| {
                if let Some(hit) = hit {
                    return Ok(hit);
                }
                let cam = f.scene.camera.frame(n).resized(width, height)?;
                let posed = skin_vertices(asset, &motion.frames[n]).map_err(|e| e.context(&format!("frame {n}")))?;
                let g = render_guidance(&posed.vertices, &mesh, &cam)?;
                let pngs = MapType::ALL.iter().map(|m| (*m, base64_png(&m.encode(&g)))).collect();
                Ok(Arc::new(RenderedFrame {
                    pngs,
                    skeleton: project_skeleton(asset, &posed.joints, &cam),
                }))
            })
            .collect::<Result<_>>()?;
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.frames.len() + rendered.len() > CACHE_LIMIT {
            cache.frames.clear();
        }
        Ok(frames
            .zip(rendered)
            .map(|(n, r)| cache.frames.entry(key(n)).or_insert(r).clone())
            .collect())
    }
}

fn base64_png(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
