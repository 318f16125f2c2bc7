//! HTTP study service: runs forced-choice sessions, records answers in an
//! append-only log, trains models in the background and serves previews.
//!
//! On-disk layout under the data directory:
//!
//! ```text
//! sessions/<session_id>/session.json   id, user, seed, config
//! sessions/<session_id>/manifest.json  scenario manifest
//! sessions/<session_id>/choices.jsonl  one ChoiceRecord per line
//! models/<model_id>.json               checkpoint
//! models/<model_id>.curve.csv          loss curve
//! models/<model_id>.test.jsonl         held-out choices
//! ```

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::image::{apply_window, read_image, save_image, DisplayWindow, Image, ImageFormat};
use crate::pyramid::{denoise, PyramidParams};
use crate::scenario::{
    derive_seed, generate_candidate_set, list_image_files, CandidateSet, FrameEntry, FrameStore,
    ParamSampler, SessionManifest, CHOICES_FILE, DEFAULT_SPREAD, MANIFEST_FILE,
};
use crate::trainer::{fit_session, save_checkpoint, CheckpointFile, TrainConfig};
use crate::user_loss::{format_choice_log, parse_choice_log, ChoiceRecord, LossVariant, DEFAULT_Q};

pub const SESSION_FILE: &str = "session.json";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub master_seed: u64,
    /// Static files (the study UI) served for non-API paths.
    pub ui_dir: Option<PathBuf>,
}

/// Request body config for a new session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Image directory; relative paths resolve against the data directory.
    pub images: String,
    pub scenarios_per_image: usize,
    pub q: usize,
    pub spread: f64,
    pub center: Option<PyramidParams>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            images: "images".into(),
            scenarios_per_image: 4,
            q: DEFAULT_Q,
            spread: DEFAULT_SPREAD,
            center: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub user_id: String,
    pub seed: u64,
    pub config: SessionConfig,
}

/// Display position `p` shows canonical candidate `order[p]`.
pub fn display_order(session_seed: u64, frame_id: &str, q: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(session_seed, frame_id, 1));
    order.shuffle(&mut rng);
    order
}

/// Reads a session directory back from disk. A torn final log line (a
/// write that never completed, so was never acknowledged) is dropped.
pub fn replay_session(dir: &Path) -> Result<(SessionMeta, SessionManifest, Vec<ChoiceRecord>)> {
    let meta: SessionMeta = serde_json::from_slice(&std::fs::read(dir.join(SESSION_FILE))?)?;
    let manifest = SessionManifest::read(&dir.join(MANIFEST_FILE))?;
    let log_path = dir.join(CHOICES_FILE);
    let mut text = match std::fs::read_to_string(&log_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        let f = OpenOptions::new().write(true).open(&log_path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    let records = parse_choice_log(&text)?;
    if records.len() > manifest.frames.len() {
        return Err(Error::Format(format!(
            "{} choices for {} frames",
            records.len(),
            manifest.frames.len()
        )));
    }
    for (rec, frame) in records.iter().zip(&manifest.frames) {
        if rec.frame_id != frame.frame_id {
            return Err(Error::Format(format!(
                "choice log out of order: expected frame {}, found {}",
                frame.frame_id, rec.frame_id
            )));
        }
    }
    Ok((meta, manifest, records))
}

struct ChoiceLog {
    records: Vec<ChoiceRecord>,
    file: File,
}

struct Session {
    meta: SessionMeta,
    manifest: SessionManifest,
    frame_index: HashMap<String, usize>,
    images: Vec<Arc<Image>>,
    log: Mutex<ChoiceLog>,
    rendered: Mutex<HashMap<String, Arc<CandidateSet>>>,
    active_job: Mutex<Option<String>>,
}

impl Session {
    fn open(dir: &Path) -> Result<Self> {
        let (meta, manifest, records) = replay_session(dir)?;
        let images = manifest.load_images(dir)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(CHOICES_FILE))?;
        let frame_index = manifest
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| (f.frame_id.clone(), i))
            .collect();
        Ok(Self {
            meta,
            manifest,
            frame_index,
            images,
            log: Mutex::new(ChoiceLog { records, file }),
            rendered: Mutex::new(HashMap::new()),
            active_job: Mutex::new(None),
        })
    }

    fn frame(&self, frame_id: &str) -> Option<&FrameEntry> {
        self.frame_index.get(frame_id).map(|&i| &self.manifest.frames[i])
    }

    fn render(&self, frame: &FrameEntry) -> Result<Arc<CandidateSet>> {
        if let Some(set) = self.rendered.lock().unwrap().get(&frame.frame_id) {
            return Ok(set.clone());
        }
        let set = Arc::new(generate_candidate_set(
            self.images[frame.source].clone(),
            frame.source,
            &frame.frame_id,
            &self.manifest.sampler,
            self.manifest.q,
            frame.seed,
        )?);
        self.rendered
            .lock()
            .unwrap()
            .insert(frame.frame_id.clone(), set.clone());
        Ok(set)
    }

    fn progress(&self, answered: usize) -> Value {
        let total = self.manifest.frames.len();
        json!({
            "progress": answered as f64 / total as f64,
            "answered": answered,
            "total": total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
struct Job {
    job_id: String,
    session_id: String,
    variant: LossVariant,
    status: JobStatus,
    epoch: usize,
    epochs: usize,
    loss: Option<f64>,
    model_id: Option<String>,
    error: Option<String>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: Mutex<HashMap<String, Arc<Mutex<Job>>>>,
    create_lock: Mutex<u64>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the data directory and replays every stored session.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("sessions"))?;
        std::fs::create_dir_all(config.data_dir.join("models"))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(config.data_dir.join("sessions"))? {
            let dir = entry?.path();
            if dir.join(SESSION_FILE).is_file() {
                let s = Session::open(&dir)?;
                sessions.insert(s.meta.session_id.clone(), Arc::new(s));
            }
        }
        let counter = sessions.len() as u64;
        Ok(Self(Arc::new(Inner {
            config,
            sessions: RwLock::new(sessions),
            jobs: Mutex::new(HashMap::new()),
            create_lock: Mutex::new(counter),
        })))
    }

    fn data_dir(&self) -> &Path {
        &self.0.config.data_dir
    }

    fn session(&self, id: &str) -> Result<Arc<Session>> {
        self.0
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session '{id}'")))
    }

    fn session_for_frame(&self, frame_id: &str) -> Result<(Arc<Session>, FrameEntry)> {
        let not_found = || Error::NotFound(format!("frame '{frame_id}'"));
        let (sid, _) = frame_id.rsplit_once("-f").ok_or_else(not_found)?;
        let session = self.session(sid).map_err(|_| not_found())?;
        let frame = session.frame(frame_id).ok_or_else(not_found)?.clone();
        Ok((session, frame))
    }

    pub fn create_session(&self, user_id: &str, config: SessionConfig) -> Result<String> {
        if user_id.trim().is_empty() {
            return Err(Error::Input("user_id must not be empty".into()));
        }
        let image_dir = {
            let p = Path::new(&config.images);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.data_dir().join(p)
            }
        };
        let files = list_image_files(&image_dir)?;
        let mut paths = Vec::with_capacity(files.len());
        for f in &files {
            read_image(f).map_err(|e| Error::Input(format!("{}: {e}", f.display())))?;
            paths.push(std::fs::canonicalize(f)?.to_string_lossy().into_owned());
        }
        let sampler = ParamSampler {
            center: config.center.unwrap_or_else(crate::scenario::default_center),
            spread: config.spread,
            ..Default::default()
        };

        let mut counter = self.0.create_lock.lock().unwrap();
        let (session_id, seed, dir) = loop {
            let seed = derive_seed(self.0.config.master_seed, "session", *counter);
            *counter += 1;
            let id = format!("{seed:016x}");
            let dir = self.data_dir().join("sessions").join(&id);
            if !dir.exists() {
                break (id, seed, dir);
            }
        };
        let mut manifest = SessionManifest::plan(
            paths,
            config.scenarios_per_image,
            sampler,
            config.q,
            seed,
            &format!("{session_id}-f"),
        )?;
        manifest.shuffle_frames(seed);
        let meta = SessionMeta {
            session_id: session_id.clone(),
            user_id: user_id.to_string(),
            seed,
            config,
        };
        std::fs::create_dir_all(&dir)?;
        manifest.write(&dir.join(MANIFEST_FILE))?;
        File::create(dir.join(CHOICES_FILE))?.sync_all()?;
        std::fs::write(dir.join(SESSION_FILE), serde_json::to_vec_pretty(&meta)?)?;
        let session = Session::open(&dir)?;
        self.0
            .sessions
            .write()
            .unwrap()
            .insert(session_id.clone(), Arc::new(session));
        Ok(session_id)
    }

    pub fn next_frame(&self, session_id: &str) -> Result<Value> {
        let s = self.session(session_id)?;
        let answered = s.log.lock().unwrap().records.len();
        let mut body = s.progress(answered);
        match s.manifest.frames.get(answered) {
            None => body["done"] = json!(true),
            Some(f) => {
                body["done"] = json!(false);
                body["frame_id"] = json!(f.frame_id);
                body["images"] = (0..s.manifest.q)
                    .map(|p| format!("/api/images/{}/{p}", f.frame_id))
                    .collect();
            }
        }
        Ok(body)
    }

    /// Appends the choice to the durable log, then advances the cursor.
    pub fn record_choice(&self, session_id: &str, frame_id: &str, position: usize) -> Result<Value> {
        let s = self.session(session_id)?;
        let mut log = s.log.lock().unwrap();
        let cursor = log.records.len();
        let expected = s
            .manifest
            .frames
            .get(cursor)
            .ok_or_else(|| Error::Conflict("session already complete".into()))?;
        if expected.frame_id != frame_id {
            return Err(Error::Conflict(format!(
                "expected a choice for frame {}, got {frame_id}",
                expected.frame_id
            )));
        }
        let q = s.manifest.q;
        if position >= q {
            return Err(Error::Input(format!("position {position} outside [0, {q})")));
        }
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        let record = ChoiceRecord {
            user_id: s.meta.user_id.clone(),
            frame_id: frame_id.to_string(),
            selected: display_order(s.meta.seed, frame_id, q)[position],
            q,
            ts,
        };
        let line = format_choice_log(std::slice::from_ref(&record))?;
        log.file.write_all(line.as_bytes())?;
        log.file.sync_data()?;
        log.records.push(record);
        Ok(s.progress(log.records.len()))
    }

    pub fn candidate_png(&self, frame_id: &str, position: usize) -> Result<Vec<u8>> {
        let (s, frame) = self.session_for_frame(frame_id)?;
        if position >= s.manifest.q {
            return Err(Error::NotFound(format!("candidate {position} of frame {frame_id}")));
        }
        let set = s.render(&frame)?;
        let canonical = display_order(s.meta.seed, frame_id, s.manifest.q)[position];
        save_image(&set.candidates[canonical], ImageFormat::PngGray)
    }

    pub fn start_training(
        &self,
        session_id: &str,
        variant: LossVariant,
        config: TrainConfig,
        folds: usize,
    ) -> Result<String> {
        let s = self.session(session_id)?;
        config.validate()?;
        let records = s.log.lock().unwrap().records.clone();
        if records.is_empty() {
            return Err(Error::Input("session has no recorded choices".into()));
        }
        let mut active = s.active_job.lock().unwrap();
        if let Some(id) = active.as_ref() {
            return Err(Error::Conflict(format!("job {id} is still running")));
        }
        let job_id = {
            let jobs = self.0.jobs.lock().unwrap();
            let n = jobs.values().filter(|j| j.lock().unwrap().session_id == session_id).count();
            format!("{session_id}-j{n}")
        };
        let job = Arc::new(Mutex::new(Job {
            job_id: job_id.clone(),
            session_id: session_id.to_string(),
            variant,
            status: JobStatus::Queued,
            epoch: 0,
            epochs: config.epochs,
            loss: None,
            model_id: None,
            error: None,
        }));
        self.0.jobs.lock().unwrap().insert(job_id.clone(), job.clone());
        *active = Some(job_id.clone());
        drop(active);

        let models_dir = self.data_dir().join("models");
        let config = TrainConfig { variant, ..config };
        let id = job_id.clone();
        std::thread::spawn(move || {
            job.lock().unwrap().status = JobStatus::Running;
            let result = run_job(&s, &records, &config, folds, &models_dir, &id, &job);
            {
                let mut j = job.lock().unwrap();
                match result {
                    Ok(()) => {
                        j.status = JobStatus::Done;
                        j.model_id = Some(id.clone());
                    }
                    Err(e) => {
                        j.status = JobStatus::Failed;
                        j.error = Some(e.to_string());
                    }
                }
            }
            *s.active_job.lock().unwrap() = None;
        });
        Ok(job_id)
    }

    pub fn job(&self, job_id: &str) -> Result<Value> {
        let job = self
            .0
            .jobs
            .lock()
            .unwrap()
            .get(job_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("job '{job_id}'")))?;
        let j = job.lock().unwrap().clone();
        Ok(serde_json::to_value(j)?)
    }

    fn model_path(&self, model_id: &str) -> Result<PathBuf> {
        let valid = !model_id.is_empty()
            && model_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let path = self.data_dir().join("models").join(format!("{model_id}.json"));
        if !valid || !path.is_file() {
            return Err(Error::NotFound(format!("model '{model_id}'")));
        }
        Ok(path)
    }

    pub fn model(&self, model_id: &str) -> Result<CheckpointFile> {
        CheckpointFile::read(&self.model_path(model_id)?)
    }

    pub fn preview_png(&self, model_id: &str, frame_id: &str, window: DisplayWindow) -> Result<Vec<u8>> {
        let model = self.model(model_id)?;
        let (s, frame) = self.session_for_frame(frame_id)?;
        let out = denoise(&s.images[frame.source], &model.params())?;
        save_image(&apply_window(&out, window), ImageFormat::PngGray)
    }
}

fn run_job(
    session: &Session,
    records: &[ChoiceRecord],
    config: &TrainConfig,
    folds: usize,
    models_dir: &Path,
    model_id: &str,
    job: &Mutex<Job>,
) -> Result<()> {
    let mut sets = Vec::new();
    for r in records {
        let frame = session
            .frame(&r.frame_id)
            .ok_or_else(|| Error::MissingData(format!("unknown frame '{}'", r.frame_id)))?;
        sets.push((*session.render(frame)?).clone());
    }
    let store = FrameStore::new(sets)?;
    let fit = fit_session(records, &store, config, folds, |p| {
        let mut j = job.lock().unwrap();
        j.epoch = p.epoch;
        j.loss = Some(p.loss);
    })?;
    save_checkpoint(&fit.checkpoint, &models_dir.join(format!("{model_id}.json")))?;
    std::fs::write(
        models_dir.join(format!("{model_id}.test.jsonl")),
        format_choice_log(&fit.test)?,
    )?;
    Ok(())
}

/// Error body `{"error": message}` with the mapped status code.
pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Input(_)
            | Error::ParamRange(_)
            | Error::IndexOutOfRange { .. }
            | Error::Protocol(_)
            | Error::Format(_)
            | Error::UnsupportedFormat(_)
            | Error::Shape { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    user_id: String,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(
    State(state): State<AppState>,
    body: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let id = blocking(move || state.create_session(&req.user_id, req.config)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn next_frame(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    Ok(Json(state.next_frame(&id)?))
}

#[derive(Deserialize)]
struct ChoiceBody {
    frame_id: String,
    position: usize,
}

async fn record_choice(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<ChoiceBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    Ok(Json(
        blocking(move || state.record_choice(&id, &req.frame_id, req.position)).await?,
    ))
}

async fn candidate_image(
    State(state): State<AppState>,
    UrlPath((frame_id, q)): UrlPath<(String, usize)>,
) -> ApiResult<Response> {
    Ok(png(blocking(move || state.candidate_png(&frame_id, q)).await?))
}

/// Optional training settings accepted by the train endpoint.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainOverrides {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    folds: Option<usize>,
    init: Option<PyramidParams>,
    select_by_validation: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainBody {
    #[serde(default)]
    variant: Option<String>,
    #[serde(default)]
    config: TrainOverrides,
}

async fn start_training(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<TrainBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let variant: LossVariant = match req.variant {
        Some(v) => v.parse()?,
        None => LossVariant::Hybrid,
    };
    let o = req.config;
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: o.epochs.unwrap_or(d.epochs),
        lr: o.lr.unwrap_or(d.lr),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        seed: o.seed.unwrap_or(state.0.config.master_seed),
        init: o.init,
        select_by_validation: o.select_by_validation.unwrap_or(d.select_by_validation),
        ..d
    };
    let folds = o.folds.unwrap_or(DEFAULT_FOLDS);
    let job_id = state.start_training(&id, variant, config, folds)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn job_status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    Ok(Json(state.job(&id)?))
}

async fn model(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<CheckpointFile>> {
    Ok(Json(state.model(&id)?))
}

#[derive(Deserialize)]
struct WindowQuery {
    wc: Option<f64>,
    ww: Option<f64>,
}

async fn preview(
    State(state): State<AppState>,
    UrlPath((model_id, frame_id)): UrlPath<(String, String)>,
    Query(w): Query<WindowQuery>,
) -> ApiResult<Response> {
    let d = DisplayWindow::default();
    let window = DisplayWindow::new(w.wc.unwrap_or(d.center), w.ww.unwrap_or(d.width))?;
    Ok(png(
        blocking(move || state.preview_png(&model_id, &frame_id, window)).await?,
    ))
}

pub fn router(state: AppState) -> Router {
    let ui = state.0.config.ui_dir.clone();
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_frame))
        .route("/api/sessions/{id}/choice", post(record_choice))
        .route("/api/sessions/{id}/train", post(start_training))
        .route("/api/images/{frame_id}/{q}", get(candidate_image))
        .route("/api/jobs/{job_id}", get(job_status))
        .route("/api/models/{model_id}", get(model))
        .route("/api/models/{model_id}/preview/{frame_id}", get(preview))
        .with_state(state)
        .layer(CorsLayer::permissive());
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, port: u16) -> Result<()> {
    let state = AppState::open(config)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
