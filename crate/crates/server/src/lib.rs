//! HTTP API over datasets, runs and reports.
//!
//! Every response is JSON carrying `"schema_version": 1` and the
//! `X-WB-Schema: 1` header. Runs execute on a bounded pool of blocking
//! workers; clients poll `GET /runs/{id}` for progress.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{middleware, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;
use wb_core::config::{RolesSection, RunConfig};
use wb_core::runstore::{RunRecord, RunStatus, SCHEMA_VERSION};
use wb_core::tabular::{parse_csv, summarize, Dataset, LoadOptions, Role};
use wb_core::workflow::{prepare, RunControl, RunOptions};
use wb_core::{ConfigIssue, Error};

pub const SCHEMA_HEADER: &str = "x-wb-schema";
const MAX_UPLOAD: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Run records go to `<runs_dir>/runs/<id>/record.json`, uploads to
    /// `<runs_dir>/datasets/`.
    pub runs_dir: PathBuf,
    /// Relative dataset paths in submitted configs resolve against this.
    pub base_dir: PathBuf,
    /// Runs executing at once.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: String,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub schema_version: u32,
    pub run_id: String,
    pub status: JobStatus,
    pub progress: Progress,
    pub config: Value,
    /// Record location relative to the runs directory, once finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Submission order.
    pub seq: u64,
}

/// Stored metadata of an uploaded dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    id: String,
    fingerprint: String,
    #[serde(default)]
    roles: Option<RolesSection>,
}

pub struct AppState {
    config: ServerConfig,
    jobs: Mutex<BTreeMap<String, JobState>>,
    records: Mutex<BTreeMap<String, Arc<RunRecord>>>,
    handles: Mutex<Vec<JoinHandle<()>>>,
    workers: Arc<Semaphore>,
    cancel: Arc<AtomicBool>,
}

impl AppState {
    /// Create the state, loading records already present in the runs
    /// directory so earlier runs stay listed.
    pub fn new(config: ServerConfig) -> std::io::Result<Arc<AppState>> {
        std::fs::create_dir_all(config.runs_dir.join("runs"))?;
        std::fs::create_dir_all(config.runs_dir.join("datasets"))?;
        let mut jobs = BTreeMap::new();
        let mut records = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(config.runs_dir.join("runs"))?
            .flatten()
            .map(|e| e.path())
            .collect();
        entries.sort();
        for dir in entries {
            let Ok(record) = RunRecord::read(&dir) else { continue };
            let mut job = finished_state(&record, jobs.len() as u64);
            job.result = Some(format!("runs/{}/record.json", record.run_id));
            jobs.insert(record.run_id.clone(), job);
            records.insert(record.run_id.clone(), Arc::new(record));
        }
        Ok(Arc::new(AppState {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            jobs: Mutex::new(jobs),
            records: Mutex::new(records),
            handles: Mutex::new(Vec::new()),
            cancel: Arc::new(AtomicBool::new(false)),
        }))
    }

    fn datasets_dir(&self) -> PathBuf {
        self.config.runs_dir.join("datasets")
    }

    pub fn job(&self, id: &str) -> Option<JobState> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    /// Cancel queued and running jobs and wait until each has written its
    /// (interrupted) record.
    pub async fn shutdown(&self) {
        self.cancel.store(true, Ordering::SeqCst);
        let handles: Vec<_> = std::mem::take(&mut *self.handles.lock().unwrap());
        for h in handles {
            let _ = h.await;
        }
    }

    /// Wait for every submitted job to finish without cancelling.
    pub async fn drain(&self) {
        loop {
            let handles: Vec<_> = std::mem::take(&mut *self.handles.lock().unwrap());
            if handles.is_empty() {
                return;
            }
            for h in handles {
                let _ = h.await;
            }
        }
    }
}

fn finished_state(record: &RunRecord, seq: u64) -> JobState {
    let folds = record.reports.cv.as_ref().map_or(0, |r| r.folds.len());
    JobState {
        schema_version: SCHEMA_VERSION,
        run_id: record.run_id.clone(),
        status: match record.status {
            RunStatus::Done => JobStatus::Done,
            RunStatus::Failed => JobStatus::Failed,
            RunStatus::Interrupted => JobStatus::Interrupted,
        },
        progress: Progress {
            phase: "finished".into(),
            completed: folds,
            total: folds,
        },
        config: record.config.clone(),
        result: None,
        digest: Some(record.digest.clone()),
        error: record.error.clone(),
        seq,
    }
}

async fn add_schema_header(mut response: Response) -> Response {
    response
        .headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from_static("1"));
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/summary", get(dataset_summary))
        .route("/datasets/{id}/roles", post(dataset_roles))
        .route("/runs", post(submit_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/report", get(run_report))
        .route("/runs/{id}/importance", get(run_importance))
        .fallback(|| async { api_error(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .layer(middleware::map_response(add_schema_header))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then cancel in-flight runs and wait for
/// their records.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.shutdown().await;
    Ok(())
}

fn body(status: StatusCode, mut value: Value) -> Response {
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    (status, Json(value)).into_response()
}

fn api_error(status: StatusCode, message: impl Into<String>) -> Response {
    body(status, json!({"error": message.into()}))
}

fn config_error(issues: &[ConfigIssue]) -> Response {
    body(
        StatusCode::BAD_REQUEST,
        json!({"error": "invalid config", "issues": issues}),
    )
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

async fn health() -> Response {
    body(StatusCode::OK, json!({"status": "ok"}))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric())
}

fn load_dataset(state: &AppState, id: &str) -> Result<(Dataset, DatasetMeta), Response> {
    let dir = state.datasets_dir();
    let missing = || api_error(StatusCode::NOT_FOUND, format!("unknown dataset `{id}`"));
    if !valid_id(id) {
        return Err(missing());
    }
    let meta: DatasetMeta = std::fs::read_to_string(dir.join(format!("{id}.json")))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .ok_or_else(missing)?;
    let bytes = std::fs::read(dir.join(format!("{id}.csv"))).map_err(|_| missing())?;
    let mut ds = parse_csv(&bytes, &LoadOptions::default())
        .map_err(|e| api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    if let Some(roles) = &meta.roles {
        ds = apply_roles(&ds, roles).map_err(|e| api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    }
    Ok((ds, meta))
}

fn apply_roles(ds: &Dataset, roles: &RolesSection) -> wb_core::Result<Dataset> {
    let mut ds = ds.set_role(&roles.target, Role::Target)?;
    for c in &roles.non_input {
        ds = ds.set_role(c, Role::NonInput)?;
    }
    Ok(ds)
}

fn is_csv(content_type: &str) -> bool {
    let mime = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    matches!(mime.as_str(), "text/csv" | "application/csv" | "text/plain")
}

async fn upload_dataset(State(state): State<Arc<AppState>>, headers: HeaderMap, request: Request) -> Response {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let bytes: Bytes = if content_type.starts_with("multipart/form-data") {
        let mut multipart = match Multipart::from_request(request, &()).await {
            Ok(m) => m,
            Err(e) => return api_error(StatusCode::BAD_REQUEST, e.body_text()),
        };
        let mut found = None;
        loop {
            match multipart.next_field().await {
                Ok(Some(field)) => {
                    let part_type = field.content_type().unwrap_or("text/csv").to_string();
                    let is_file = field.file_name().is_some() || field.name() == Some("file");
                    if !is_file {
                        continue;
                    }
                    if !is_csv(&part_type) {
                        return api_error(
                            StatusCode::UNSUPPORTED_MEDIA_TYPE,
                            format!("expected CSV, got {part_type}"),
                        );
                    }
                    match field.bytes().await {
                        Ok(b) => found = Some(b),
                        Err(e) => return api_error(StatusCode::BAD_REQUEST, e.body_text()),
                    }
                    break;
                }
                Ok(None) => break,
                Err(e) => return api_error(StatusCode::BAD_REQUEST, e.body_text()),
            }
        }
        match found {
            Some(b) => b,
            None => return api_error(StatusCode::BAD_REQUEST, "multipart body has no `file` part"),
        }
    } else if is_csv(&content_type) {
        match Bytes::from_request(request, &()).await {
            Ok(b) => b,
            Err(e) => return api_error(StatusCode::PAYLOAD_TOO_LARGE, e.body_text()),
        }
    } else {
        return api_error(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            format!("expected text/csv or multipart/form-data, got `{content_type}`"),
        );
    };
    let ds = match parse_csv(&bytes, &LoadOptions::default()) {
        Ok(ds) => ds,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let fingerprint = ds.fingerprint();
    let id = fingerprint[..16].to_string();
    let dir = state.datasets_dir();
    let meta_path = dir.join(format!("{id}.json"));
    if meta_path.exists() {
        return body(
            StatusCode::OK,
            json!({"id": id, "fingerprint": fingerprint, "created": false}),
        );
    }
    let meta = DatasetMeta {
        id: id.clone(),
        fingerprint: fingerprint.clone(),
        roles: None,
    };
    let written = std::fs::write(dir.join(format!("{id}.csv")), &bytes)
        .and_then(|_| std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta).unwrap()));
    if let Err(e) = written {
        return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    body(
        StatusCode::CREATED,
        json!({"id": id, "fingerprint": fingerprint, "created": true, "schema": ds.schema()}),
    )
}

async fn dataset_summary(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let (ds, meta) = match load_dataset(&state, &id) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let columns: Vec<_> = ds
        .columns()
        .iter()
        .map(|c| summarize(&ds, &c.name).map(|s| (c.role, s)))
        .collect::<Result<_, _>>()
        .unwrap_or_default();
    let columns: Vec<Value> = columns
        .into_iter()
        .map(|(role, s)| {
            let mut v = to_value(&s);
            v["role"] = to_value(&role);
            v
        })
        .collect();
    body(
        StatusCode::OK,
        json!({"id": id, "fingerprint": meta.fingerprint, "n_rows": ds.n_rows(), "columns": columns}),
    )
}

async fn dataset_roles(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let (_, mut meta) = match load_dataset(&state, &id) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Ok(Json(doc)) = payload else {
        return api_error(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let roles: RolesSection = match serde_json::from_value(doc) {
        Ok(r) => r,
        Err(e) => return config_error(&[ConfigIssue::new("roles", e.to_string())]),
    };
    let bytes = std::fs::read(state.datasets_dir().join(format!("{id}.csv"))).unwrap_or_default();
    let raw = match parse_csv(&bytes, &LoadOptions::default()) {
        Ok(ds) => ds,
        Err(e) => return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let mut issues = Vec::new();
    if raw.column(&roles.target).is_err() {
        issues.push(ConfigIssue::new("target", format!("no column `{}`", roles.target)));
    }
    for (i, c) in roles.non_input.iter().enumerate() {
        if raw.column(c).is_err() {
            issues.push(ConfigIssue::new(format!("non_input[{i}]"), format!("no column `{c}`")));
        } else if *c == roles.target {
            issues.push(ConfigIssue::new(
                format!("non_input[{i}]"),
                format!("`{c}` is the target"),
            ));
        }
    }
    if !issues.is_empty() {
        return config_error(&issues);
    }
    let ds = match apply_roles(&raw, &roles) {
        Ok(ds) => ds,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    meta.roles = Some(roles);
    let path = state.datasets_dir().join(format!("{id}.json"));
    if let Err(e) = std::fs::write(&path, serde_json::to_vec_pretty(&meta).unwrap()) {
        return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let mut v = to_value(&ds.schema());
    v["id"] = json!(id);
    body(StatusCode::OK, v)
}

/// The config document of a submission: the body itself, or its `config`
/// member when the body wraps it.
fn unwrap_config(doc: Value) -> Value {
    match doc {
        Value::Object(mut map) if map.len() == 1 && map.contains_key("config") => map.remove("config").unwrap(),
        other => other,
    }
}

async fn submit_run(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let doc = match payload {
        Ok(Json(doc)) => unwrap_config(doc),
        Err(e) => return config_error(&[ConfigIssue::new("", e.body_text())]),
    };
    let config = match RunConfig::from_json(&doc) {
        Ok(c) => c,
        Err(issues) => return config_error(&issues),
    };
    let opts = RunOptions {
        base_dir: state.config.base_dir.clone(),
        datasets_dir: Some(state.datasets_dir()),
        ..RunOptions::default()
    };
    let prepared = {
        let doc = doc.clone();
        match tokio::task::spawn_blocking(move || prepare(config, doc, &opts)).await {
            Ok(Ok(p)) => p,
            Ok(Err(Error::Config(issues))) => return config_error(&issues),
            Ok(Err(e)) => return config_error(&[ConfigIssue::new("dataset", e.to_string())]),
            Err(e) => return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    };
    let run_id = prepared.run_id().to_string();
    let job = {
        let mut jobs = state.jobs.lock().unwrap();
        if let Some(existing) = jobs.get(&run_id) {
            if existing.status != JobStatus::Interrupted {
                return body(StatusCode::ACCEPTED, to_value(existing));
            }
        }
        let seq = jobs.values().map(|j| j.seq + 1).max().unwrap_or(0);
        let job = JobState {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.clone(),
            status: JobStatus::Queued,
            progress: Progress {
                phase: "queued".into(),
                completed: 0,
                total: 0,
            },
            config: doc,
            result: None,
            digest: None,
            error: None,
            seq,
        };
        jobs.insert(run_id.clone(), job.clone());
        job
    };
    let worker_state = state.clone();
    let handle = tokio::spawn(async move {
        let permit = worker_state.workers.clone().acquire_owned().await;
        let st = worker_state.clone();
        let id = run_id.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            update(&st, &id, |j| {
                j.status = JobStatus::Running;
                j.progress.phase = "running".into();
            });
            let progress = |phase: &str, done: usize, total: usize| {
                update(&st, &id, |j| {
                    j.progress.phase = phase.to_string();
                    j.progress.completed = j.progress.completed.max(done);
                    j.progress.total = total;
                });
            };
            let control = RunControl {
                jobs: None,
                cancel: Some(&st.cancel),
                progress: Some(&progress),
            };
            let record = prepared.execute(&control)?;
            let path = record.write(&st.config.runs_dir)?;
            Ok::<_, Error>((record, path))
        })
        .await;
        let st = &worker_state;
        match outcome {
            Ok(Ok((record, path))) => {
                let rel = path
                    .strip_prefix(&st.config.runs_dir)
                    .unwrap_or(Path::new(&path))
                    .display()
                    .to_string();
                update(st, &run_id, |j| {
                    let before = j.progress.clone();
                    *j = finished_state(&record, j.seq);
                    j.progress.completed = j.progress.completed.max(before.completed);
                    j.progress.total = j.progress.total.max(before.total);
                    j.result = Some(rel);
                });
                st.records.lock().unwrap().insert(run_id.clone(), Arc::new(record));
            }
            Ok(Err(e)) => update(st, &run_id, |j| {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }),
            Err(e) => update(st, &run_id, |j| {
                j.status = JobStatus::Failed;
                j.error = Some(format!("worker crashed: {e}"));
            }),
        }
    });
    state.handles.lock().unwrap().push(handle);
    body(StatusCode::ACCEPTED, to_value(&job))
}

fn update(state: &AppState, id: &str, f: impl FnOnce(&mut JobState)) {
    if let Some(job) = state.jobs.lock().unwrap().get_mut(id) {
        f(job);
    }
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Response {
    let mut runs: Vec<JobState> = state.jobs.lock().unwrap().values().cloned().collect();
    runs.sort_by_key(|j| j.seq);
    body(StatusCode::OK, json!({"runs": runs}))
}

async fn get_run(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.job(&id) {
        Some(job) => body(StatusCode::OK, to_value(&job)),
        None => api_error(StatusCode::NOT_FOUND, format!("unknown run `{id}`")),
    }
}

/// The finished record of a run, or the response explaining its absence.
fn finished(state: &AppState, id: &str) -> Result<Arc<RunRecord>, Response> {
    let Some(job) = state.job(id) else {
        return Err(api_error(StatusCode::NOT_FOUND, format!("unknown run `{id}`")));
    };
    if job.status != JobStatus::Done {
        return Err(api_error(
            StatusCode::NOT_FOUND,
            format!(
                "run `{id}` is {}",
                serde_json::to_value(job.status).unwrap().as_str().unwrap()
            ),
        ));
    }
    state
        .records
        .lock()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| api_error(StatusCode::NOT_FOUND, format!("run `{id}` has no record")))
}

async fn run_report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match finished(&state, &id) {
        Ok(record) => body(
            StatusCode::OK,
            json!({
                "run_id": record.run_id,
                "digest": record.digest,
                "cv": record.reports.cv,
                "holdout": record.reports.holdout,
                "final_config": record.final_config,
            }),
        ),
        Err(r) => r,
    }
}

async fn run_importance(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match finished(&state, &id) {
        Ok(record) => body(
            StatusCode::OK,
            json!({"run_id": record.run_id, "reports": record.importance}),
        ),
        Err(r) => r,
    }
}
