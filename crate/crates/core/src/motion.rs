//! Per-frame parametric motion and its JSON form.
//!
//! ```json
//! { "version": 1, "fps": 30, "frame_count": N, "coordinate_frame": "world",
//!   "frames": [ { "gamma": [..3], "phi": [..3], "theta": [[..3], ..],
//!                 "beta": [..S], "theta_h": [[[..3], ..], [[..3], ..]],
//!                 "expression": .., "child_factor": c } ] }
//! ```
//!
//! Fields this crate does not know are kept and written back.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::body::{BodyModelAsset, FramePose};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub coordinate_frame: String,
    pub frames: Vec<FramePose>,
    /// Unknown top-level fields.
    pub extra: Map<String, Value>,
    /// Unknown per-frame fields, parallel to `frames`.
    pub frame_extra: Vec<Map<String, Value>>,
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    gamma: [f64; 3],
    phi: [f64; 3],
    theta: Vec<[f64; 3]>,
    beta: Vec<f64>,
    theta_h: [Vec<[f64; 3]>; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expression: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    child_factor: Option<f64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct SequenceJson {
    version: u32,
    fps: f64,
    frame_count: usize,
    coordinate_frame: String,
    frames: Vec<FrameJson>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Vec<FramePose>) -> Self {
        let n = frames.len();
        MotionSequence {
            fps,
            coordinate_frame: "world".to_string(),
            frames,
            extra: Map::new(),
            frame_extra: vec![Map::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Root translations `gamma` of every frame.
    pub fn translations(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.translation).collect()
    }

    /// Structural checks that need no asset.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(Error::validation("motion sequence has no frames"));
        }
        if self.frame_extra.len() != self.frames.len() {
            return Err(Error::validation("per-frame extras do not match frame count"));
        }
        Ok(())
    }

    pub fn check_against(&self, asset: &BodyModelAsset) -> Result<()> {
        self.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            f.check_against(asset).map_err(|e| e.context(&format!("frame {i}")))?;
        }
        Ok(())
    }

    /// Frames `range`, keeping extras aligned.
    pub fn slice(&self, range: std::ops::Range<usize>) -> MotionSequence {
        MotionSequence {
            fps: self.fps,
            coordinate_frame: self.coordinate_frame.clone(),
            frames: self.frames[range.clone()].to_vec(),
            extra: self.extra.clone(),
            frame_extra: self.frame_extra[range].to_vec(),
        }
    }

    pub fn to_json(&self) -> Value {
        let frames = self
            .frames
            .iter()
            .zip(&self.frame_extra)
            .map(|(f, extra)| FrameJson {
                gamma: arr(&f.translation),
                phi: arr(&f.global_orientation),
                theta: f.body_pose.iter().map(arr).collect(),
                beta: f.shape.clone(),
                theta_h: [
                    f.hand_pose[0].iter().map(arr).collect(),
                    f.hand_pose[1].iter().map(arr).collect(),
                ],
                expression: f.expression.clone(),
                child_factor: (f.child_factor != 0.0).then_some(f.child_factor),
                extra: extra.clone(),
            })
            .collect();
        serde_json::to_value(SequenceJson {
            version: SCHEMA_VERSION,
            fps: self.fps,
            frame_count: self.frames.len(),
            coordinate_frame: self.coordinate_frame.clone(),
            frames,
            extra: self.extra.clone(),
        })
        .expect("motion serializes")
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let version = value
            .get("version")
            .ok_or_else(|| Error::validation("motion: missing schema version"))?;
        if version.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(Error::validation(format!(
                "motion: unsupported schema version {version}"
            )));
        }
        let raw: SequenceJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::validation(format!("motion: {e}")))?;
        if raw.frame_count != raw.frames.len() {
            return Err(Error::validation(format!(
                "motion: frame_count is {} but {} frames are present",
                raw.frame_count,
                raw.frames.len()
            )));
        }
        let v3 = |a: &[f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let mut frames = Vec::with_capacity(raw.frames.len());
        let mut frame_extra = Vec::with_capacity(raw.frames.len());
        for f in raw.frames {
            frames.push(FramePose {
                translation: v3(&f.gamma),
                global_orientation: v3(&f.phi),
                body_pose: f.theta.iter().map(v3).collect(),
                shape: f.beta,
                hand_pose: [
                    f.theta_h[0].iter().map(v3).collect(),
                    f.theta_h[1].iter().map(v3).collect(),
                ],
                expression: f.expression,
                child_factor: f.child_factor.unwrap_or(0.0),
            });
            frame_extra.push(f.extra);
        }
        let seq = MotionSequence {
            fps: raw.fps,
            coordinate_frame: raw.coordinate_frame,
            frames,
            extra: raw.extra,
            frame_extra,
        };
        seq.validate().map_err(|e| e.context("motion"))?;
        let finite = seq.frames.iter().all(|f| {
            f.translation
                .iter()
                .chain(f.global_orientation.iter())
                .all(|v| v.is_finite())
                && f.body_pose.iter().flatten().all(|v| v.is_finite())
                && f.hand_pose.iter().flatten().flatten().all(|v| v.is_finite())
                && f.shape.iter().all(|v| v.is_finite())
                && f.child_factor.is_finite()
        });
        if !finite {
            return Err(Error::validation("motion: non-finite values"));
        }
        Ok(seq)
    }

    /// Pretty JSON with a trailing newline; byte-stable for equal sequences.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("motion serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Self::from_json(&value).map_err(|e| match e {
            Error::Validation(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}
