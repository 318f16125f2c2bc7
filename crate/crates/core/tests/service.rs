use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use prefdn::image::{load_image, save_image, write_image, ImageFormat};
use prefdn::scenario::CHOICES_FILE;
use prefdn::service::{display_order, replay_session, router, AppState, ServiceConfig};
use prefdn::synth::noisy_phantoms;
use prefdn::user_loss::parse_choice_log;
use serde_json::{json, Value};
use tower::ServiceExt;

fn setup(n_images: usize) -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    for (i, img) in noisy_phantoms(n_images, 24, 0.05, 3).unwrap().iter().enumerate() {
        write_image(img, &images.join(format!("img{i}.pgm"))).unwrap();
    }
    let app = router(AppState::open(config(dir.path())).unwrap());
    (dir, app)
}

fn config(data: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: data.to_path_buf(),
        master_seed: 11,
        ui_dir: None,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, spi: usize) -> String {
    let (status, body) = call_json(
        app,
        "POST",
        "/api/sessions",
        Some(json!({"user_id": "alice", "config": {"scenarios_per_image": spi}})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn answer_all(app: &Router, sid: &str) -> usize {
    let mut n = 0;
    loop {
        let (_, next) = call_json(app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
        if next["done"] == json!(true) {
            return n;
        }
        let frame_id = next["frame_id"].as_str().unwrap();
        let (status, _) = call_json(
            app,
            "POST",
            &format!("/api/sessions/{sid}/choice"),
            Some(json!({"frame_id": frame_id, "position": n % 4})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        n += 1;
    }
}

async fn wait_for_job(app: &Router, job_id: &str) -> Value {
    for _ in 0..600 {
        let (status, job) = call_json(app, "GET", &format!("/api/jobs/{job_id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job_id} did not finish");
}

fn has_key(v: &Value, needle: &str) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, v)| k.contains(needle) || has_key(v, needle)),
        Value::Array(a) => a.iter().any(|v| has_key(v, needle)),
        _ => false,
    }
}

#[tokio::test]
async fn choosing_flow_is_blind_and_durable() {
    let (dir, app) = setup(3);
    let sid = new_session(&app, 2).await;

    let (status, next) = call_json(&app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["answered"], 0);
    assert_eq!(next["total"], 6);
    assert_eq!(next["progress"], 0.0);
    assert_eq!(next["done"], false);
    let images = next["images"].as_array().unwrap();
    assert_eq!(images.len(), 4);
    for key in ["sigma", "eps", "param", "seed"] {
        assert!(!has_key(&next, key), "payload leaks '{key}': {next}");
    }
    let frame_id = next["frame_id"].as_str().unwrap().to_string();

    let (status, png) = call(&app, "GET", images[2].as_str().unwrap(), None).await;
    assert_eq!(status, StatusCode::OK);
    let img = load_image(&png, ImageFormat::PngGray).unwrap();
    assert_eq!(img.dims(), (24, 24));
    let (status, _) = call(&app, "GET", &format!("/api/images/{frame_id}/4"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/images/nope-f0000/0", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let choice = format!("/api/sessions/{sid}/choice");
    let (status, _) = call_json(&app, "POST", &choice, Some(json!({"frame_id": "other", "position": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call_json(&app, "POST", &choice, Some(json!({"frame_id": frame_id, "position": 4}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(&app, "POST", &choice, Some(json!({"frame": 1}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, ack) = call_json(&app, "POST", &choice, Some(json!({"frame_id": frame_id, "position": 2}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["answered"], 1);
    let (status, _) = call_json(&app, "POST", &choice, Some(json!({"frame_id": frame_id, "position": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let session_dir = dir.path().join("sessions").join(&sid);
    let log = parse_choice_log(&std::fs::read_to_string(session_dir.join(CHOICES_FILE)).unwrap()).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].frame_id, frame_id);
    assert_eq!(log[0].user_id, "alice");
    assert_eq!(log[0].selected, display_order(u64::from_str_radix(&sid, 16).unwrap(), &frame_id, 4)[2]);

    assert_eq!(answer_all(&app, &sid).await, 5);
    let (_, done) = call_json(&app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    assert_eq!(done["done"], true);
    assert_eq!(done["progress"], 1.0);
    let (status, _) = call_json(&app, "POST", &choice, Some(json!({"frame_id": frame_id, "position": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // a restarted service replays the log into the same state
    let (_, _, before) = replay_session(&session_dir).unwrap();
    assert_eq!(before.len(), 6);
    let app2 = router(AppState::open(config(dir.path())).unwrap());
    let (_, again) = call_json(&app2, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    assert_eq!(again, done);
    assert_eq!(replay_session(&session_dir).unwrap().2, before);
}

#[tokio::test]
async fn torn_log_tail_is_discarded_on_restart() {
    let (dir, app) = setup(2);
    let sid = new_session(&app, 1).await;
    let (_, next) = call_json(&app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    let frame_id = next["frame_id"].as_str().unwrap();
    call_json(
        &app,
        "POST",
        &format!("/api/sessions/{sid}/choice"),
        Some(json!({"frame_id": frame_id, "position": 0})),
    )
    .await;
    let log = dir.path().join("sessions").join(&sid).join(CHOICES_FILE);
    let intact = std::fs::read_to_string(&log).unwrap();
    std::fs::write(&log, format!("{intact}{{\"user_id\":\"ali")).unwrap();

    let app2 = router(AppState::open(config(dir.path())).unwrap());
    let (_, next) = call_json(&app2, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    assert_eq!(next["answered"], 1);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), intact);
}

#[tokio::test]
async fn session_creation_errors() {
    let (dir, app) = setup(1);
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let (status, _) = call_json(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"user_id": "bob", "config": {"images": "empty"}})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"user_id": "bob", "config": {"images": "missing"}})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", "/api/sessions", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(&app, "GET", "/api/sessions/unknown/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // same user twice gives independent sessions
    let a = new_session(&app, 1).await;
    let b = new_session(&app, 1).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn training_jobs_models_and_previews() {
    let (dir, app) = setup(3);
    let sid = new_session(&app, 2).await;
    let train = format!("/api/sessions/{sid}/train");
    let (status, _) = call_json(&app, "POST", &train, Some(json!({"variant": "hybrid"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "no choices yet");
    answer_all(&app, &sid).await;

    let (status, _) = call_json(&app, "POST", &train, Some(json!({"variant": "bogus"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(&app, "POST", &train, Some(json!({"config": {"epochs": 0}}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let body = json!({"variant": "hybrid", "config": {"epochs": 400, "batch_size": 4, "folds": 3}});
    let (status, started) = call_json(&app, "POST", &train, Some(body.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job_id = started["job_id"].as_str().unwrap().to_string();
    let (status, _) = call_json(&app, "POST", &train, Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let job = wait_for_job(&app, &job_id).await;
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["epoch"], 400);
    assert!(job["loss"].as_f64().unwrap().is_finite());
    let model_id = job["model_id"].as_str().unwrap().to_string();

    let (status, model) = call_json(&app, "GET", &format!("/api/models/{model_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(model["user_id"], "alice");
    assert_eq!(model["variant"], "hybrid");
    assert_eq!(model["sigmas"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("models").join(format!("{model_id}.test.jsonl")).is_file());
    let (status, _) = call_json(&app, "GET", "/api/models/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/api/models/..%2Fsessions", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&app, "GET", "/api/jobs/none", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // a new job can start once the previous one finished
    let (status, second) = call_json(&app, "POST", &train, Some(json!({"variant": "bm", "config": {"epochs": 2}}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_ne!(second["job_id"], started["job_id"]);
    assert_eq!(wait_for_job(&app, second["job_id"].as_str().unwrap()).await["status"], "done");

    let (_, next) = call_json(&app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    assert_eq!(next["done"], true);
    let session_dir = dir.path().join("sessions").join(&sid);
    let frame_id = replay_session(&session_dir).unwrap().1.frames[0].frame_id.clone();
    let preview = format!("/api/models/{model_id}/preview/{frame_id}");
    let (status, plain) = call(&app, "GET", &preview, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, windowed) = call(&app, "GET", &format!("{preview}?wc=0.5&ww=1"), None).await;
    assert_eq!(plain, windowed);
    let (_, narrow) = call(&app, "GET", &format!("{preview}?wc=0.5&ww=0.2"), None).await;
    assert_ne!(plain, narrow);
    let (status, _) = call(&app, "GET", &format!("{preview}?ww=-1"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", &format!("/api/models/{model_id}/preview/{sid}-f9999"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn identity_model_preview_matches_original() {
    let (dir, app) = setup(1);
    let sid = new_session(&app, 1).await;
    let checkpoint = json!({
        "user_id": "alice", "variant": "hybrid",
        "sigmas": [1.0, 2.0, 4.0], "epsilons": [0.0, 0.0, 0.0],
        "config_hash": "x", "split_id": "x", "curve_path": "identity.curve.csv"
    });
    std::fs::write(dir.path().join("models/identity.json"), checkpoint.to_string()).unwrap();
    let (_, next) = call_json(&app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
    let frame_id = next["frame_id"].as_str().unwrap();
    let (status, png) = call(&app, "GET", &format!("/api/models/identity/preview/{frame_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let original = prefdn::image::read_image(&dir.path().join("images/img0.pgm")).unwrap();
    assert_eq!(png, save_image(&original, ImageFormat::PngGray).unwrap());
}
