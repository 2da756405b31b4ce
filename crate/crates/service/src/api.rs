//! Request and response bodies. Every response carries `api_version`;
//! requests may carry it too and are rejected if it differs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{FromRequest, Request};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use worldmotion::config::Config;
use worldmotion::render::MapType;
use worldmotion::trajectory::Keypoint;

use crate::error::ApiError;

pub const API_VERSION: u32 = 1;

/// JSON body whose syntax and schema errors both answer 422.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        serde_json::from_slice(&bytes)
            .map(ApiJson)
            .map_err(|e| ApiError::unprocessable(format!("invalid request body: {e}")))
    }
}

pub fn check_version(v: Option<u32>) -> Result<(), ApiError> {
    match v {
        Some(v) if v != API_VERSION => Err(ApiError::unprocessable(format!(
            "api_version {v} is not supported, this server speaks {API_VERSION}"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub api_version: Option<u32>,
    /// Estimator bundle directory.
    pub bundle: PathBuf,
    #[serde(default)]
    pub config: Option<Config>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutTrajectory {
    pub api_version: Option<u32>,
    pub expected_version: u64,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutClip {
    pub api_version: Option<u32>,
    pub expected_version: u64,
    /// `null` returns to the bundle's own motion.
    pub clip_id: Option<String>,
    /// Looped length; defaults to the bundle's frame count.
    pub frames: Option<usize>,
    pub blend_window: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    pub api_version: Option<u32>,
    pub start: usize,
    /// Exclusive; defaults to `start + 1`.
    pub end: Option<usize>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    /// Defaults to all map types.
    pub maps: Option<Vec<MapType>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    pub api_version: Option<u32>,
    pub out_dir: PathBuf,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub depth_pfm: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct ImageRef {
    pub width: u32,
    pub height: u32,
    /// Path of the first-frame background image on this server.
    pub first_frame: String,
}

#[derive(Debug, Serialize)]
pub struct SessionCreated {
    pub api_version: u32,
    pub id: String,
    pub version: u64,
    pub frame_count: usize,
    pub fps: f64,
    pub camera: serde_json::Value,
    pub camera_source: worldmotion::pipeline::CameraSource,
    pub image: ImageRef,
}

#[derive(Debug, Serialize)]
pub struct ClipSummary {
    pub id: String,
    pub tags: Vec<String>,
    pub loopable: bool,
    pub fps: f64,
    pub source_frames: usize,
    pub looped_frames: usize,
    pub blend_window: usize,
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub api_version: u32,
    pub id: String,
    pub version: u64,
    pub bundle: PathBuf,
    pub frame_count: usize,
    pub config: Config,
    pub keypoints: Option<Vec<Keypoint>>,
    pub clip: Option<ClipSummary>,
}

#[derive(Debug, Serialize)]
pub struct TrajectoryWarnings {
    pub degenerate_frames: Vec<usize>,
    pub clamped_frames: Vec<usize>,
    pub held_heading_frames: Vec<usize>,
    pub ground_fallback_frames: Vec<usize>,
    pub all_static: bool,
    pub end_shortfall_m: f64,
}

#[derive(Debug, Serialize)]
pub struct TrajectoryResponse {
    pub api_version: u32,
    pub version: u64,
    pub frame_count: usize,
    /// Interpolated pixel per frame.
    pub pixels: Vec<[f64; 2]>,
    /// Lifted ground path, world coordinates.
    pub world_path: Vec<[f64; 3]>,
    /// Speed-aligned ground path, world coordinates.
    pub aligned_path: Vec<[f64; 3]>,
    /// The aligned path projected for overlay.
    pub aligned_pixels: Vec<[f64; 2]>,
    pub headings_rad: Vec<f64>,
    pub rescale_factor: f64,
    pub warnings: TrajectoryWarnings,
}

#[derive(Debug, Serialize)]
pub struct ClipResponse {
    pub api_version: u32,
    pub version: u64,
    pub clip: Option<ClipSummary>,
}

#[derive(Debug, Serialize)]
pub struct PreviewFrame {
    pub frame: usize,
    /// Base64 PNG per requested map type.
    pub maps: BTreeMap<String, String>,
    /// Bone segments in preview pixels.
    pub skeleton: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Serialize)]
pub struct PreviewResponse {
    pub api_version: u32,
    pub version: u64,
    /// Content hash of the session state the frames were computed from.
    pub state: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<PreviewFrame>,
}

#[derive(Debug, Serialize)]
pub struct ExportResponse {
    pub api_version: u32,
    pub version: u64,
    pub sequence: PathBuf,
    pub report: PathBuf,
    pub camera: PathBuf,
    pub manifest: PathBuf,
    pub frame_count: usize,
}
