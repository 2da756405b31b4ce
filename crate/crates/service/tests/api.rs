use std::path::Path;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use worldmotion::bank::{MotionBank, MotionClip};
use worldmotion::body::mannequin::mannequin;
use worldmotion::camera::CameraTrack;
use worldmotion::motion::MotionSequence;
use worldmotion::pipeline::render_motion;
use worldmotion::render::{decode_png, RenderManifest, RenderOptions};
use worldmotion::synthetic::{walking_motion, write_walking_scene, SceneParams, WalkParams};
use worldmotion_service::{router, AppState, ServiceConfig};

struct Fixture {
    dir: tempfile::TempDir,
    app: Router,
}

impl Fixture {
    fn bundle(&self) -> String {
        self.dir.path().join("bundle").display().to_string()
    }
}

fn scene(dir: &Path, frames: usize) {
    let p = SceneParams {
        walk: WalkParams {
            frames,
            ..WalkParams::default()
        },
        ..SceneParams::default()
    };
    write_walking_scene(&mannequin(), &p, &dir.join("bundle")).unwrap();
}

fn bank(dir: &Path) {
    let seq = walking_motion(
        &mannequin(),
        &WalkParams {
            frames: 40,
            cycle_frames: 40,
            ..WalkParams::default()
        },
    )
    .unwrap();
    let mut b = MotionBank::open(&dir.join("bank")).unwrap();
    let clip = MotionClip {
        id: "walk".into(),
        tags: vec!["walk".into(), "locomotion".into()],
        sequence: seq,
        loopable: true,
        source_meta: "synthetic".into(),
    };
    b.add(&clip, false).unwrap();
}

fn app_for(dir: &Path, snapshots: bool) -> Router {
    let cfg = ServiceConfig {
        asset: mannequin(),
        bank: Some(dir.join("bank")),
        snapshot_dir: snapshots.then(|| dir.join("snapshots")),
        cors_origin: None,
    };
    let (state, skipped) = AppState::new(&cfg).unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    router(state, None)
}

fn fixture(frames: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), frames);
    bank(dir.path());
    let app = app_for(dir.path(), false);
    Fixture { dir, app }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn create(f: &Fixture) -> String {
    let (s, v) = call_json(&f.app, Method::POST, "/sessions", Some(json!({ "bundle": f.bundle() }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn line() -> Value {
    json!([{ "u": 150.0, "v": 400.0 }, { "u": 380.0, "v": 360.0 }])
}

#[tokio::test]
async fn create_reports_the_scene() {
    let f = fixture(12);
    let (s, v) = call_json(
        &f.app,
        Method::POST,
        "/sessions",
        Some(json!({ "bundle": f.bundle(), "api_version": 1 })),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["api_version"], 1);
    assert_eq!(v["frame_count"], 12);
    assert_eq!(v["version"], 1);
    assert_eq!(v["camera_source"], "registration");
    assert_eq!(v["image"]["width"], 512);
    let id = v["id"].as_str().unwrap();
    let (s, png) = call(&f.app, Method::GET, v["image"]["first_frame"].as_str().unwrap(), None).await;
    assert_eq!(s, StatusCode::OK);
    let img = decode_png(&png).unwrap();
    assert_eq!((img.width, img.height, img.channels), (512, 512, 3));
    let (s, summary) = call_json(&f.app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(summary["keypoints"], Value::Null);
    assert_eq!(summary["config"]["trajectory"]["heading_window"], 9);
}

#[tokio::test]
async fn unknown_sessions_and_bad_payloads() {
    let f = fixture(8);
    for (m, uri, body) in [
        (Method::GET, "/sessions/nope", None),
        (Method::DELETE, "/sessions/nope", None),
        (
            Method::PUT,
            "/sessions/nope/trajectory",
            Some(json!({ "expected_version": 1, "keypoints": line() })),
        ),
        (
            Method::PUT,
            "/sessions/nope/clip",
            Some(json!({ "expected_version": 1, "clip_id": null })),
        ),
        (Method::POST, "/sessions/nope/preview", Some(json!({ "start": 0 }))),
        (
            Method::POST,
            "/sessions/nope/export",
            Some(json!({ "out_dir": "/tmp/x" })),
        ),
    ] {
        let (s, v) = call_json(&f.app, m, uri, body).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(v["error"]["kind"], "not_found");
    }
    let id = create(&f).await;
    let uri = format!("/sessions/{id}/trajectory");
    for bad in [
        json!({ "keypoints": line() }),
        json!({ "expected_version": 1, "keypoints": "x" }),
        json!({ "expected_version": 1, "keypoints": line(), "extra": 1 }),
        json!({ "api_version": 2, "expected_version": 1, "keypoints": line() }),
        json!({ "expected_version": 1, "keypoints": [{ "u": 900.0, "v": 1.0 }, { "u": 1.0, "v": 1.0 }] }),
    ] {
        let (s, v) = call_json(&f.app, Method::PUT, &uri, Some(bad.clone())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}: {v}");
    }
    let (s, _) = call(&f.app, Method::POST, "/sessions", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = call_json(
        &f.app,
        Method::POST,
        "/sessions",
        Some(json!({ "bundle": "/no/such/dir" })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "io");
    // failed mutations leave the version alone
    let (_, summary) = call_json(&f.app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["version"], 1);
}

#[tokio::test]
async fn two_keypoints_lift_onto_the_ground() {
    let f = fixture(20);
    let id = create(&f).await;
    let (s, v) = call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 1, "keypoints": line() })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 2);
    assert_eq!(v["pixels"].as_array().unwrap().len(), 20);
    for path in ["world_path", "aligned_path"] {
        for p in v[path].as_array().unwrap() {
            assert!(p[1].as_f64().unwrap().abs() < 1e-9, "{path}: {p}");
        }
    }
    assert_eq!(v["pixels"][0], json!([150.0, 400.0]));
    assert_eq!(v["warnings"]["ground_fallback_frames"].as_array().unwrap().len(), 20);
    assert!(v["rescale_factor"].as_f64().unwrap() > 0.0);
    let (s, v) = call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 1, "keypoints": line() })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["kind"], "version_conflict");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_mutations_on_one_version_conflict() {
    let f = fixture(10);
    let id = create(&f).await;
    let uri = format!("/sessions/{id}/trajectory");
    let body = json!({ "expected_version": 1, "keypoints": line() });
    let (a, b) = tokio::join!(
        call_json(&f.app, Method::PUT, &uri, Some(body.clone())),
        call_json(&f.app, Method::PUT, &uri, Some(body.clone()))
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn previews_are_stable_and_cache_independent() {
    let f = fixture(20);
    let id = create(&f).await;
    let put = json!({ "expected_version": 1, "keypoints": line() });
    call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(put.clone()),
    )
    .await;
    let req = json!({ "start": 0, "width": 128, "height": 96 });
    let uri = format!("/sessions/{id}/preview");
    let (s, first) = call(&f.app, Method::POST, &uri, Some(req.clone())).await;
    assert_eq!(s, StatusCode::OK);
    let (_, second) = call(&f.app, Method::POST, &uri, Some(req.clone())).await;
    assert_eq!(first, second);
    // a fresh session in the same state answers identically without a cache
    let other = create(&f).await;
    call_json(&f.app, Method::PUT, &format!("/sessions/{other}/trajectory"), Some(put)).await;
    let (_, fresh) = call(&f.app, Method::POST, &format!("/sessions/{other}/preview"), Some(req)).await;
    assert_eq!(first, fresh);

    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["version"], 2);
    let frame = &v["frames"][0];
    assert_eq!(frame["frame"], 0);
    assert_eq!(frame["maps"].as_object().unwrap().len(), 5);
    assert_eq!(frame["skeleton"].as_array().unwrap().len(), 27);
    use base64::Engine;
    let depth = base64::engine::general_purpose::STANDARD
        .decode(frame["maps"]["depth"].as_str().unwrap())
        .unwrap();
    let img = decode_png(&depth).unwrap();
    assert_eq!((img.width, img.height, img.bit_depth), (128, 96, 16));
    assert!(img.samples.iter().any(|&d| d > 0));

    let (s, v) = call_json(
        &f.app,
        Method::POST,
        &uri,
        Some(json!({ "start": 3, "end": 5, "maps": ["mask"] })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["frames"].as_array().unwrap().len(), 2);
    assert_eq!(v["frames"][1]["frame"], 4);
    assert_eq!(
        v["frames"][0]["maps"].as_object().unwrap().keys().collect::<Vec<_>>(),
        vec!["mask"]
    );
    for bad in [
        json!({ "start": 20 }),
        json!({ "start": 2, "end": 1 }),
        json!({ "start": 0, "maps": ["rgb"] }),
    ] {
        let (s, _) = call(&f.app, Method::POST, &uri, Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn preview_meets_the_latency_target() {
    let f = fixture(30);
    let id = create(&f).await;
    call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 1, "keypoints": line() })),
    )
    .await;
    let t = Instant::now();
    let (s, _) = call(
        &f.app,
        Method::POST,
        &format!("/sessions/{id}/preview"),
        Some(json!({ "start": 10, "end": 15, "width": 256, "height": 256 })),
    )
    .await;
    let took = t.elapsed();
    assert_eq!(s, StatusCode::OK);
    println!("cold preview of 5 frames at 256x256: {took:?}");
    assert!(took.as_millis() < 500, "{took:?}");
}

#[tokio::test]
async fn clip_selection_and_preview() {
    let f = fixture(30);
    let id = create(&f).await;
    let (s, v) = call_json(&f.app, Method::GET, "/clips", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["clips"][0]["id"], "walk");
    let uri = format!("/sessions/{id}/clip");
    let (s, v) = call_json(
        &f.app,
        Method::PUT,
        &uri,
        Some(json!({ "expected_version": 1, "clip_id": "nope" })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, v) = call_json(
        &f.app,
        Method::PUT,
        &uri,
        Some(json!({ "expected_version": 1, "clip_id": "walk", "blend_window": 4 })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 2);
    assert_eq!(v["clip"]["source_frames"], 40);
    assert_eq!(v["clip"]["looped_frames"], 30);
    // a clip has no placement until a trajectory is drawn
    let preview = format!("/sessions/{id}/preview");
    let (s, _) = call(
        &f.app,
        Method::POST,
        &preview,
        Some(json!({ "start": 0, "width": 64, "height": 64 })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 2, "keypoints": line() })),
    )
    .await;
    let (s, _) = call(
        &f.app,
        Method::POST,
        &preview,
        Some(json!({ "start": 0, "width": 64, "height": 64 })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call_json(
        &f.app,
        Method::PUT,
        &uri,
        Some(json!({ "expected_version": 3, "clip_id": null })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["clip"], Value::Null);
}

#[tokio::test]
async fn export_matches_an_independent_render() {
    let f = fixture(6);
    let id = create(&f).await;
    call_json(
        &f.app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 1, "keypoints": line() })),
    )
    .await;
    let out = f.dir.path().join("export");
    let (s, v) = call_json(
        &f.app,
        Method::POST,
        &format!("/sessions/{id}/export"),
        Some(json!({ "out_dir": out, "width": 96, "height": 96 })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["frame_count"], 6);
    let exported = RenderManifest::read(Path::new(v["manifest"].as_str().unwrap())).unwrap();
    // re-render from the written files alone
    let seq = MotionSequence::read(Path::new(v["sequence"].as_str().unwrap())).unwrap();
    let cams = CameraTrack::read(Path::new(v["camera"].as_str().unwrap())).unwrap();
    let again = f.dir.path().join("again");
    let opts = RenderOptions {
        width: 96,
        height: 96,
        depth_pfm: false,
    };
    let manifest = render_motion(&mannequin(), &seq, &cams, &opts, &again).unwrap();
    assert_eq!(manifest, exported);
    assert_eq!(
        std::fs::read(again.join("manifest.json")).unwrap(),
        std::fs::read(out.join("render/manifest.json")).unwrap()
    );
}

#[tokio::test]
async fn sessions_survive_a_restart_through_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 10);
    bank(dir.path());
    let app = app_for(dir.path(), true);
    let bundle = dir.path().join("bundle");
    let (_, v) = call_json(&app, Method::POST, "/sessions", Some(json!({ "bundle": bundle }))).await;
    let id = v["id"].as_str().unwrap().to_string();
    call_json(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/trajectory"),
        Some(json!({ "expected_version": 1, "keypoints": line() })),
    )
    .await;
    let (_, before) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/preview"),
        Some(json!({ "start": 1, "width": 64, "height": 64 })),
    )
    .await;

    let restarted = app_for(dir.path(), true);
    let (s, summary) = call_json(&restarted, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(summary["version"], 2);
    assert_eq!(summary["keypoints"].as_array().unwrap().len(), 2);
    let (_, after) = call(
        &restarted,
        Method::POST,
        &format!("/sessions/{id}/preview"),
        Some(json!({ "start": 1, "width": 64, "height": 64 })),
    )
    .await;
    assert_eq!(before, after);
    // new ids do not collide with restored ones
    let (_, v) = call_json(&restarted, Method::POST, "/sessions", Some(json!({ "bundle": bundle }))).await;
    assert_ne!(v["id"].as_str().unwrap(), id);
    let (s, _) = call(&restarted, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    assert!(!dir.path().join("snapshots").join(format!("{id}.json")).exists());
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let f = fixture(4);
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
    let (s, v) = call_json(&f.app, Method::GET, "/api", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["api_version"], 1);
}
