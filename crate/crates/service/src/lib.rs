//! HTTP facade over the editing pipeline.
//!
//! Sessions live in memory, optionally mirrored to JSON snapshots. Each
//! session serializes its mutations; a mutation must name the version it
//! was based on and is refused with 409 when another one got there first.
//! Derived results (edits, preview frames) are cached under a content hash
//! of the session state, so the cache only ever changes latency.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api` | server api version |
//! | GET | `/clips` | bank clips |
//! | POST | `/sessions` | open a bundle |
//! | GET, DELETE | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/background` | first-frame image, PNG |
//! | PUT | `/sessions/{id}/trajectory` | set keypoints |
//! | PUT | `/sessions/{id}/clip` | choose a bank clip |
//! | POST | `/sessions/{id}/preview` | guidance maps and skeleton |
//! | POST | `/sessions/{id}/export` | edited motion and full render |

pub mod api;
pub mod error;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use worldmotion::bank::MotionBank;
use worldmotion::body::{skin_vertices, BodyModelAsset};
use worldmotion::config::Config;
use worldmotion::pipeline::{render_motion, write_edit_outputs};
use worldmotion::render::{render_guidance, MapType, RenderMesh, RenderOptions};
use worldmotion::trajectory::Trajectory2D;
use worldmotion::Error;

use api::*;
use error::ApiError;
use session::{plan_response, Frozen, Session, SessionCell, Snapshot};

/// Largest preview request, frames and pixels per side.
pub const MAX_PREVIEW_FRAMES: usize = 64;
pub const MAX_PREVIEW_SIDE: u32 = 4096;

pub struct ServiceConfig {
    pub asset: BodyModelAsset,
    pub bank: Option<PathBuf>,
    /// Directory mirroring every session as `<id>.json`.
    pub snapshot_dir: Option<PathBuf>,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

struct Inner {
    asset: BodyModelAsset,
    bank: Option<PathBuf>,
    snapshot_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<SessionCell>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Builds the state, restoring sessions from the snapshot directory.
    /// Snapshots that no longer load are reported and skipped.
    pub fn new(cfg: &ServiceConfig) -> worldmotion::Result<(AppState, Vec<String>)> {
        let mut sessions = HashMap::new();
        let mut skipped = Vec::new();
        let mut next = 1;
        if let Some(dir) = &cfg.snapshot_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for p in files {
                let restored = std::fs::read_to_string(&p)
                    .map_err(|e| Error::io(&p, e))
                    .and_then(|t| serde_json::from_str::<Snapshot>(&t).map_err(|e| Error::parse(&p, e)))
                    .and_then(|snap| Session::restore(&cfg.asset, cfg.bank.as_deref(), &snap));
                match restored {
                    Ok(s) => {
                        if let Some(n) = s.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                            next = next.max(n + 1);
                        }
                        sessions.insert(s.id.clone(), Arc::new(SessionCell::new(s)));
                    }
                    Err(e) => skipped.push(format!("{}: {e}", p.display())),
                }
            }
        }
        let inner = Inner {
            asset: cfg.asset.clone(),
            bank: cfg.bank.clone(),
            snapshot_dir: cfg.snapshot_dir.clone(),
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(next),
        };
        Ok((AppState(Arc::new(inner)), skipped))
    }

    fn cell(&self, id: &str) -> Result<Arc<SessionCell>, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }

    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.0.snapshot_dir else { return Ok(()) };
        let text = serde_json::to_string_pretty(&s.snapshot()).expect("snapshot serializes");
        let tmp = dir.join(format!(".{}.json.tmp", s.id));
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, snapshot_path(dir, &s.id)))
            .map_err(|e| ApiError::internal(format!("snapshot of session {}: {e}", s.id)))
    }
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api", get(api_info))
        .route("/clips", get(list_clips))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/background", get(background))
        .route("/sessions/{id}/trajectory", put(put_trajectory))
        .route("/sessions/{id}/clip", put(put_clip))
        .route("/sessions/{id}/preview", post(preview))
        .route("/sessions/{id}/export", post(export))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let (state, skipped) = AppState::new(&cfg).map_err(std::io::Error::other)?;
    for s in skipped {
        eprintln!("skipped snapshot {s}");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cfg.cors_origin.as_deref())).await
}

async fn api_info() -> Json<serde_json::Value> {
    Json(json!({ "api_version": API_VERSION, "name": "worldmotion" }))
}

async fn list_clips(State(app): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let Some(root) = app.0.bank.clone() else {
        return Ok(Json(json!({ "api_version": API_VERSION, "clips": [] })));
    };
    let clips =
        blocking(move || MotionBank::open(&root).map(|b| b.list().into_iter().cloned().collect::<Vec<_>>())).await??;
    Ok(Json(json!({ "api_version": API_VERSION, "clips": clips })))
}

async fn create_session(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    check_version(req.api_version)?;
    let config = req.config.unwrap_or_default();
    config.validate()?;
    let id = format!("s{}", app.0.next_id.fetch_add(1, Ordering::SeqCst));
    let inner = app.clone();
    let session = blocking(move || Session::open(&inner.0.asset, id, &req.bundle, config)).await??;
    let cam = session.scene.draw_camera();
    let created = SessionCreated {
        api_version: API_VERSION,
        id: session.id.clone(),
        version: session.version,
        frame_count: session.frame_count(),
        fps: session.scene.body.fps,
        camera: session.scene.camera.to_json(),
        camera_source: session.scene.camera_source,
        image: ImageRef {
            width: cam.width,
            height: cam.height,
            first_frame: format!("/sessions/{}/background", session.id),
        },
    };
    app.persist(&session)?;
    app.0
        .sessions
        .write()
        .expect("session table lock")
        .insert(session.id.clone(), Arc::new(SessionCell::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    let cell = app.cell(&id)?;
    let s = cell.state.lock().await;
    Ok(Json(SessionSummary {
        api_version: API_VERSION,
        id: s.id.clone(),
        version: s.version,
        bundle: s.bundle.clone(),
        frame_count: s.frame_count(),
        config: s.config,
        keypoints: s.trajectory.as_ref().map(|t| t.keypoints.clone()),
        clip: s.clip_summary(),
    }))
}

async fn delete_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    let removed = app.0.sessions.write().expect("session table lock").remove(&id);
    if removed.is_none() {
        return Err(ApiError::not_found(format!("no session {id:?}")));
    }
    if let Some(dir) = &app.0.snapshot_dir {
        let _ = std::fs::remove_file(snapshot_path(dir, &id));
    }
    Ok(StatusCode::NO_CONTENT)
}

/// `background.png` from the bundle when present, else the captured body's
/// semantic map at the camera resolution.
async fn background(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let cell = app.cell(&id)?;
    let (bundle, scene) = {
        let s = cell.state.lock().await;
        (s.bundle.clone(), s.scene.clone())
    };
    let bytes = blocking(move || -> worldmotion::Result<Vec<u8>> {
        let file = bundle.join("background.png");
        if file.is_file() {
            return std::fs::read(&file).map_err(|e| Error::io(&file, e));
        }
        let posed = skin_vertices(&app.0.asset, &scene.body.frames[0])?;
        let g = render_guidance(
            &posed.vertices,
            &RenderMesh::from_asset(&app.0.asset),
            scene.draw_camera(),
        )?;
        Ok(MapType::Semantic.encode(&g))
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn put_trajectory(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<PutTrajectory>,
) -> Result<Json<TrajectoryResponse>, ApiError> {
    check_version(req.api_version)?;
    let cell = app.cell(&id)?;
    let mut s = cell.state.clone().lock_owned().await;
    if s.version != req.expected_version {
        return Err(ApiError::conflict(req.expected_version, s.version));
    }
    let res = blocking(move || {
        let traj = Trajectory2D::new(req.keypoints);

        plan_response(&s, &traj, s.version + 1)
            .map_err(ApiError::from)
            .and_then(|r| {
                s.trajectory = Some(traj);
                s.version += 1;
                app.persist(&s)?;
                Ok(r)
            })
    })
    .await??;
    Ok(Json(res))
}

async fn put_clip(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<PutClip>,
) -> Result<Json<ClipResponse>, ApiError> {
    check_version(req.api_version)?;
    let cell = app.cell(&id)?;
    let mut s = cell.state.clone().lock_owned().await;
    if s.version != req.expected_version {
        return Err(ApiError::conflict(req.expected_version, s.version));
    }
    let bank = match (&app.0.bank, &req.clip_id) {
        (Some(b), _) => b.clone(),
        (None, None) => PathBuf::new(),
        (None, Some(_)) => return Err(ApiError::unprocessable("the server has no motion bank")),
    };
    let res = blocking(move || -> Result<ClipResponse, ApiError> {
        s.select_clip(
            &app.0.asset,
            &bank,
            req.clip_id.as_deref(),
            req.frames,
            req.blend_window,
        )?;
        s.version += 1;
        app.persist(&s)?;
        Ok(ClipResponse {
            api_version: API_VERSION,
            version: s.version,
            clip: s.clip_summary(),
        })
    })
    .await??;
    Ok(Json(res))
}

async fn preview(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<PreviewRequest>,
) -> Result<Json<PreviewResponse>, ApiError> {
    check_version(req.api_version)?;
    let cell = app.cell(&id)?;
    let (frozen, n) = {
        let s = cell.state.lock().await;
        (Frozen::of(&s), s.frame_count())
    };
    let end = req.end.unwrap_or(req.start + 1);
    if req.start >= end || end > n {
        return Err(ApiError::unprocessable(format!(
            "frame range [{}, {end}) is empty or outside [0, {n})",
            req.start
        )));
    }
    if end - req.start > MAX_PREVIEW_FRAMES {
        return Err(ApiError::unprocessable(format!(
            "at most {MAX_PREVIEW_FRAMES} frames per preview"
        )));
    }
    let width = req.width.unwrap_or(frozen.config.render.width);
    let height = req.height.unwrap_or(frozen.config.render.height);
    if width == 0 || height == 0 || width > MAX_PREVIEW_SIDE || height > MAX_PREVIEW_SIDE {
        return Err(ApiError::unprocessable(format!(
            "preview size must lie in 1..={MAX_PREVIEW_SIDE}"
        )));
    }
    let maps = req.maps.unwrap_or_else(|| MapType::ALL.to_vec());
    let start = req.start;
    let (state, version) = (frozen.hash.clone(), frozen.version);
    let rendered = blocking(move || cell.preview(&app.0.asset, &frozen, start..end, width, height)).await??;
    let frames = rendered
        .iter()
        .enumerate()
        .map(|(i, r)| PreviewFrame {
            frame: start + i,
            maps: maps
                .iter()
                .map(|m| (m.name().to_string(), r.pngs[m].clone()))
                .collect::<BTreeMap<_, _>>(),
            skeleton: r.skeleton.clone(),
        })
        .collect();
    Ok(Json(PreviewResponse {
        api_version: API_VERSION,
        version,
        state,
        width,
        height,
        frames,
    }))
}

async fn export(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<ExportRequest>,
) -> Result<Json<ExportResponse>, ApiError> {
    check_version(req.api_version)?;
    let cell = app.cell(&id)?;
    let frozen = Frozen::of(&*cell.state.lock().await);
    let cfg: Config = frozen.config;
    let opts = RenderOptions {
        width: req.width.unwrap_or(cfg.render.width),
        height: req.height.unwrap_or(cfg.render.height),
        depth_pfm: req.depth_pfm.unwrap_or(cfg.render.depth_pfm),
    };
    let version = frozen.version;
    let res = blocking(move || -> worldmotion::Result<ExportResponse> {
        let outcome = cell.edit(&app.0.asset, &frozen)?;
        let [sequence, report, camera] = write_edit_outputs(&outcome, &frozen.scene.camera, &req.out_dir)?;
        let render_dir: PathBuf = req.out_dir.join("render");
        render_motion(
            &app.0.asset,
            &outcome.sequence,
            &frozen.scene.camera,
            &opts,
            &render_dir,
        )?;
        Ok(ExportResponse {
            api_version: API_VERSION,
            version,
            sequence,
            report,
            camera,
            manifest: render_dir.join("manifest.json"),
            frame_count: outcome.sequence.len(),
        })
    })
    .await??;
    Ok(Json(res))
}

/// Snapshot file of session `id` under `dir`.
pub fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}
