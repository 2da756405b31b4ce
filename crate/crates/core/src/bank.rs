//! Tagged action clips, looping and shape retargeting.
//!
//! On disk a bank is `index.json` plus `clips/<id>.motion.json`; the index
//! holds clip metadata and is replaced atomically on every mutation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::FramePose;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rotation::{angle_between, axis_angle_to_matrix, matrix_to_axis_angle, slerp};

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub tags: Vec<String>,
    pub sequence: MotionSequence,
    pub loopable: bool,
    pub source_meta: String,
}

/// Index entry: everything about a clip except its frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipInfo {
    pub id: String,
    pub tags: Vec<String>,
    pub loopable: bool,
    #[serde(default)]
    pub source_meta: String,
    pub frame_count: usize,
    pub fps: f64,
}

impl MotionClip {
    pub fn info(&self) -> ClipInfo {
        ClipInfo {
            id: self.id.clone(),
            tags: self.tags.clone(),
            loopable: self.loopable,
            source_meta: self.source_meta.clone(),
            frame_count: self.sequence.len(),
            fps: self.sequence.fps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        self.sequence
            .validate()
            .map_err(|e| e.context(&format!("clip {}", self.id)))
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.info().has_tag(tag)
    }
}

impl ClipInfo {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t.to_lowercase() == tag.to_lowercase())
    }
}

/// Ids name files, so they are restricted to `[A-Za-z0-9._-]` and may not
/// start with a dot.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!("invalid clip id {id:?}")))
    }
}

/// Clips carrying every tag in `filter` (case-insensitive), sorted by id.
/// An empty filter matches everything.
pub fn query_clips<'a>(clips: &'a [ClipInfo], filter: &[String]) -> Vec<&'a ClipInfo> {
    let mut out: Vec<&ClipInfo> = clips.iter().filter(|c| filter.iter().all(|t| c.has_tag(t))).collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    clips: Vec<ClipInfo>,
}

/// A bank directory.
#[derive(Debug)]
pub struct MotionBank {
    root: PathBuf,
    clips: Vec<ClipInfo>,
}

impl MotionBank {
    /// Opens a bank, creating an empty one if `root` has no index yet.
    pub fn open(root: &Path) -> Result<Self> {
        let index = root.join("index.json");
        if !index.exists() {
            std::fs::create_dir_all(root.join("clips")).map_err(|e| Error::io(root, e))?;
            let bank = MotionBank {
                root: root.to_path_buf(),
                clips: Vec::new(),
            };
            bank.write_index()?;
            return Ok(bank);
        }
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let raw: IndexFile = serde_json::from_str(&text).map_err(|e| Error::parse(&index, e))?;
        if raw.version != INDEX_VERSION {
            return Err(Error::parse(
                &index,
                format!("unsupported bank index version {}", raw.version),
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &raw.clips {
            validate_id(&c.id).map_err(|e| Error::parse(&index, e))?;
            if !seen.insert(c.id.clone()) {
                return Err(Error::parse(&index, format!("duplicate clip id {}", c.id)));
            }
        }
        Ok(MotionBank {
            root: root.to_path_buf(),
            clips: raw.clips,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// All clips, id-sorted.
    pub fn list(&self) -> Vec<&ClipInfo> {
        query_clips(&self.clips, &[])
    }

    pub fn query(&self, filter: &[String]) -> Vec<&ClipInfo> {
        query_clips(&self.clips, filter)
    }

    pub fn info(&self, id: &str) -> Option<&ClipInfo> {
        self.clips.iter().find(|c| c.id == id)
    }

    fn clip_path(&self, id: &str) -> PathBuf {
        self.root.join("clips").join(format!("{id}.motion.json"))
    }

    /// Stores a clip. Existing ids are rejected unless `replace` is set.
    pub fn add(&mut self, clip: &MotionClip, replace: bool) -> Result<()> {
        clip.validate()?;
        let existing = self.clips.iter().position(|c| c.id == clip.id);
        if existing.is_some() && !replace {
            return Err(Error::validation(format!("clip {} already exists", clip.id)));
        }
        clip.sequence.write(&self.clip_path(&clip.id))?;
        match existing {
            Some(i) => self.clips[i] = clip.info(),
            None => self.clips.push(clip.info()),
        }
        self.write_index()
    }

    pub fn load(&self, id: &str) -> Result<MotionClip> {
        let info = self
            .info(id)
            .ok_or_else(|| Error::validation(format!("no clip with id {id:?} in the bank")))?;
        let sequence = MotionSequence::read(&self.clip_path(id))?;
        Ok(MotionClip {
            id: info.id.clone(),
            tags: info.tags.clone(),
            sequence,
            loopable: info.loopable,
            source_meta: info.source_meta.clone(),
        })
    }

    fn write_index(&self) -> Result<()> {
        let mut clips = self.clips.clone();
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        let text = serde_json::to_string_pretty(&IndexFile {
            version: INDEX_VERSION,
            clips,
        })
        .expect("index serializes");
        let path = self.root.join("index.json");
        let tmp = self.root.join("index.json.tmp");
        std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// A joint's seam correction: the offset rotation and the fraction of it
/// still applied at each of the first `blend_window` frames of a cycle.
struct SeamBlend {
    offset: Matrix3<f64>,
    weights: Vec<f64>,
}

impl SeamBlend {
    fn apply(&self, i: usize, aa: &mut Vector3<f64>) {
        let partial = slerp(&Matrix3::identity(), &self.offset, self.weights[i]);
        *aa = matrix_to_axis_angle(&(partial * axis_angle_to_matrix(aa)));
    }
}

/// Seam corrections for every rotation track of a clip.
struct SeamOffsets {
    root: Option<SeamBlend>,
    body: Vec<Option<SeamBlend>>,
    hands: [Vec<Option<SeamBlend>>; 2],
}

/// Offset taking the clip's first frame onto the expected continuation of
/// its last frame (last rotation advanced by the mean of the boundary
/// steps), or `None` when the raw seam jump is no larger than the joint's
/// biggest step inside the clip.
///
/// The offset angle is released over the `blend + 1` steps from the last
/// frame into frame `blend` of the next cycle. Each step can grow by at most
/// the headroom between the joint's biggest intra-clip step and that step's
/// own size, so the angle is split in proportion to the headroom; when the
/// total headroom is too small, every step overshoots by the same amount.
fn seam_offset(track: &[Vector3<f64>], blend: usize) -> Option<SeamBlend> {
    let r: Vec<Matrix3<f64>> = track.iter().map(axis_angle_to_matrix).collect();
    let len = r.len();
    let intra = r.windows(2).map(|w| angle_between(&w[0], &w[1])).fold(0.0, f64::max);
    if angle_between(&r[len - 1], &r[0]) <= intra * (1.0 + 1e-9) + 1e-12 {
        return None;
    }
    let step_end = r[len - 1] * r[len - 2].transpose();
    let step_start = r[1] * r[0].transpose();
    let expected = slerp(&step_end, &step_start, 0.5) * r[len - 1];
    let offset = expected * r[0].transpose();
    let theta = angle_between(&Matrix3::identity(), &offset);
    // step 0 lands on the expected continuation, step k is the clip's own
    let base = std::iter::once(angle_between(&r[len - 1], &expected))
        .chain((1..=blend).map(|k| angle_between(&r[k - 1], &r[k])));
    let room: Vec<f64> = base.map(|s| (intra - s).max(0.0)).collect();
    let total: f64 = room.iter().sum();
    let spend: Vec<f64> = if total >= theta && total > 0.0 {
        room.iter().map(|h| theta * h / total).collect()
    } else {
        let over = (theta - total) / room.len() as f64;
        room.iter().map(|h| h + over).collect()
    };
    let mut left = theta;
    let weights = spend[..blend]
        .iter()
        .map(|d| {
            left -= d;
            (left / theta).clamp(0.0, 1.0)
        })
        .collect();
    Some(SeamBlend { offset, weights })
}

/// Repeats `clip` to exactly `n` frames.
///
/// Root translation continues across seams: each cycle is shifted on the
/// ground plane by the clip's net displacement plus one boundary step (mean
/// of its first and last steps), so the path never jumps. The vertical
/// coordinate is not accumulated. For the first `blend_window` frames of
/// every repeated cycle, joints that jump at the seam carry a decaying
/// offset towards the expected continuation of the previous cycle.
pub fn loop_clip(clip: &MotionSequence, n: usize, blend_window: usize) -> Result<MotionSequence> {
    let len = clip.len();
    if len < 2 {
        return Err(Error::validation(format!(
            "looping needs a clip of at least 2 frames, got {len}"
        )));
    }
    if blend_window >= len {
        return Err(Error::validation(format!(
            "blend window {blend_window} must be shorter than the clip ({len} frames)"
        )));
    }
    if n == 0 {
        return Err(Error::validation("target frame count must be positive"));
    }
    let f = &clip.frames;
    let shape_ok = f.iter().all(|p| {
        p.body_pose.len() == f[0].body_pose.len()
            && p.hand_pose[0].len() == f[0].hand_pose[0].len()
            && p.hand_pose[1].len() == f[0].hand_pose[1].len()
    });
    if !shape_ok {
        return Err(Error::validation("clip frames have inconsistent pose dimensions"));
    }
    let seam_step = ((f[1].translation - f[0].translation) + (f[len - 1].translation - f[len - 2].translation)) * 0.5;
    let mut cycle_shift = f[len - 1].translation - f[0].translation + seam_step;
    cycle_shift.y = 0.0;

    let offsets = (blend_window > 0).then(|| {
        let pick = |get: &dyn Fn(&FramePose) -> Vector3<f64>| {
            seam_offset(&f.iter().map(get).collect::<Vec<_>>(), blend_window)
        };
        SeamOffsets {
            root: pick(&|p| p.global_orientation),
            body: (0..f[0].body_pose.len()).map(|s| pick(&|p| p.body_pose[s])).collect(),
            hands: [0, 1].map(|side| {
                (0..f[0].hand_pose[side].len())
                    .map(|s| pick(&|p| p.hand_pose[side][s]))
                    .collect()
            }),
        }
    });

    let mut frames = Vec::with_capacity(n);
    let mut frame_extra = Vec::with_capacity(n);
    for out in 0..n {
        let cycle = out / len;
        let i = out % len;
        let mut pose = f[i].clone();
        pose.translation += cycle_shift * cycle as f64;
        if let (Some(off), true) = (&offsets, cycle > 0 && i < blend_window) {
            let apply = |b: &Option<SeamBlend>, aa: &mut Vector3<f64>| {
                if let Some(b) = b {
                    b.apply(i, aa);
                }
            };
            apply(&off.root, &mut pose.global_orientation);
            for (o, aa) in off.body.iter().zip(pose.body_pose.iter_mut()) {
                apply(o, aa);
            }
            for side in 0..2 {
                for (o, aa) in off.hands[side].iter().zip(pose.hand_pose[side].iter_mut()) {
                    apply(o, aa);
                }
            }
        }
        frames.push(pose);
        frame_extra.push(clip.frame_extra[i].clone());
    }
    Ok(MotionSequence {
        fps: clip.fps,
        coordinate_frame: clip.coordinate_frame.clone(),
        frames,
        extra: clip.extra.clone(),
        frame_extra,
    })
}

/// Gives every frame the reference subject's shape and child factor.
pub fn retarget_shape(clip: &MotionClip, shape: &[f64], child_factor: f64) -> Result<MotionClip> {
    if !(0.0..=1.0).contains(&child_factor) {
        return Err(Error::validation(format!("child factor {child_factor} outside [0, 1]")));
    }
    if shape.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("shape contains non-finite values"));
    }
    let mut out = clip.clone();
    for f in &mut out.sequence.frames {
        if f.shape.len() != shape.len() {
            return Err(Error::validation(format!(
                "shape has {} coefficients, clip frames carry {}",
                shape.len(),
                f.shape.len()
            )));
        }
        f.shape = shape.to_vec();
        f.child_factor = child_factor;
    }
    Ok(out)
}
