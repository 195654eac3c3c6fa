//! Request/response API, all under `/api/v1`.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use structpolicy::session::{AgentInstance, AgentMode, BatterySpec, SessionError};
use structpolicy::sim::{ActionVector, StartConfig, Termination, DEFAULT_CUTOFF_STEPS};
use structpolicy::trainer::{DemoSource, Demonstration, Frame, TrainConfig};

use crate::error::{ApiError, ApiJson};
use crate::protocol::{FramePacket, StreamMode};
use crate::realtime;
use crate::state::{AppState, SessionHandle, SessionView};

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/load", post(load_session))
        .route("/sessions/{id}/instructions", get(list_instructions).post(add_instruction))
        .route("/sessions/{id}/instructions/{iid}", patch(toggle_instruction).delete(remove_instruction))
        .route("/sessions/{id}/demos", get(list_demos).post(add_demo))
        .route("/sessions/{id}/demos/{did}", get(get_demo).patch(toggle_demo).delete(remove_demo))
        .route("/sessions/{id}/train", post(start_training))
        .route("/sessions/{id}/jobs", get(list_jobs))
        .route("/sessions/{id}/jobs/{job}", get(get_job).delete(cancel_job))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/rollouts", post(rollout))
        .route("/sessions/{id}/battery", post(battery))
        .route("/sessions/{id}/eval", get(eval_matrix))
        .route("/sessions/{id}/submit", post(submit))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/transcripts", get(transcripts))
        .route("/sessions/{id}/stream", get(realtime::stream));
    Router::new().nest("/api/v1", api).fallback(not_found).with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no-route", "no such endpoint")
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

/// An empty body means all defaults.
fn optional_json<T: DeserializeOwned + Default>(body: &[u8]) -> AppResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    /// `false` turns the call into a background job answered with 202.
    #[serde(default = "yes")]
    wait: bool,
}

fn yes() -> bool {
    true
}

/// Runs a mutation inline or as a job, depending on `wait`.
async fn run_mutation<F>(handle: &Arc<SessionHandle>, kind: &str, wait: bool, ok: StatusCode, f: F) -> AppResult<Response>
where
    F: FnOnce(&mut AgentInstance) -> Result<Value, SessionError> + Send + 'static,
{
    if wait {
        let value = handle.mutate(f).await?;
        Ok((ok, Json(json!({ "result": value, "session": &*handle.view() }))).into_response())
    } else {
        let job = handle.spawn_job(kind, move |a, _| f(a));
        Ok((StatusCode::ACCEPTED, Json(job.status())).into_response())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    id: Option<String>,
    #[serde(default = "structured")]
    mode: AgentMode,
    train_config: Option<TrainConfig>,
    track_seed: Option<u64>,
}

fn structured() -> AgentMode {
    AgentMode::Structured
}

async fn create_session(State(app): Shared, ApiJson(body): ApiJson<CreateSession>) -> AppResult<Response> {
    let id = body.id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    let mut agent = AgentInstance::new(id, body.mode);
    if let Some(c) = body.train_config {
        c.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        agent.train_config = c;
    }
    if let Some(seed) = body.track_seed {
        agent.track_seed = seed;
    }
    let app2 = app.clone();
    let handle = tokio::task::spawn_blocking(move || app2.create(agent))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(&*handle.view())).into_response())
}

async fn list_sessions(State(app): Shared) -> Json<Value> {
    Json(json!({ "sessions": app.list() }))
}

pub(crate) async fn session(app: &Arc<AppState>, id: String) -> AppResult<Arc<SessionHandle>> {
    let app = app.clone();
    tokio::task::spawn_blocking(move || app.get(&id)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<SessionView>> {
    Ok(Json((*session(&app, id).await?.view()).clone()))
}

/// Opens a persisted session. Already open sessions are returned as they are.
async fn load_session(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<SessionView>> {
    Ok(Json((*session(&app, id).await?.view()).clone()))
}

async fn list_instructions(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let view = session(&app, id).await?.view();
    Ok(Json(json!({ "instructions": view.instructions })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddInstruction {
    text: String,
    created_at: Option<u64>,
}

async fn add_instruction(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
    ApiJson(body): ApiJson<AddInstruction>,
) -> AppResult<Response> {
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("instruction text is empty"));
    }
    let handle = session(&app, id).await?;
    let created_at = body.created_at.unwrap_or_else(now_secs);
    let (backend, config) = (app.backend.clone(), app.restructure.clone());
    run_mutation(&handle, "add-instruction", q.wait, StatusCode::CREATED, move |a| {
        let iid = a.add_instruction(&body.text, created_at, backend.as_ref(), &config)?;
        Ok(json!({ "id": iid }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Toggle {
    used: bool,
}

async fn toggle_instruction(
    State(app): Shared,
    Path((id, iid)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
    ApiJson(body): ApiJson<Toggle>,
) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let (backend, config) = (app.backend.clone(), app.restructure.clone());
    run_mutation(&handle, "toggle-instruction", q.wait, StatusCode::OK, move |a| {
        a.toggle_instruction(&iid, body.used, backend.as_ref(), &config)?;
        Ok(json!({ "id": iid, "used": body.used }))
    })
    .await
}

async fn remove_instruction(
    State(app): Shared,
    Path((id, iid)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let (backend, config) = (app.backend.clone(), app.restructure.clone());
    run_mutation(&handle, "remove-instruction", q.wait, StatusCode::OK, move |a| {
        a.remove_instruction(&iid, backend.as_ref(), &config)?;
        Ok(json!({ "id": iid }))
    })
    .await
}

async fn list_demos(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let view = session(&app, id).await?.view();
    Ok(Json(json!({ "demos": view.demos })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddDemo {
    frames: Vec<Frame>,
    source: Option<DemoSource>,
    track_seed: Option<u64>,
    start: Option<StartConfig>,
}

async fn add_demo(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
    ApiJson(body): ApiJson<AddDemo>,
) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let names = ActionVector::NAMES.iter().map(|s| s.to_string()).collect();
    let mut demo = Demonstration::new("pending", body.source.unwrap_or(DemoSource::Human), names, body.frames);
    demo.meta.track_seed = body.track_seed;
    demo.meta.start = body.start;
    if q.wait {
        run_mutation(&handle, "add-demo", true, StatusCode::CREATED, move |a| Ok(json!({ "id": a.add_demonstration(demo)? })))
            .await
    } else {
        let job = handle.spawn_job("add-demo", move |a, job| {
            let did = a.add_demonstration_with(demo, &mut |b, l| job.progress(b, l))?;
            Ok(json!({ "id": did }))
        });
        Ok((StatusCode::ACCEPTED, Json(job.status())).into_response())
    }
}

async fn get_demo(State(app): Shared, Path((id, did)): Path<(String, String)>) -> AppResult<Json<Value>> {
    let handle = session(&app, id).await?;
    let demo = handle.read(move |a| a.demo(&did).cloned().ok_or(did)).await?;
    let demo = demo.map_err(|did| ApiError::not_found("demonstration", &did))?;
    Ok(Json(json!({ "meta": demo.meta, "frames": demo.frames })))
}

async fn toggle_demo(
    State(app): Shared,
    Path((id, did)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
    ApiJson(body): ApiJson<Toggle>,
) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    run_mutation(&handle, "toggle-demo", q.wait, StatusCode::OK, move |a| {
        a.toggle_demonstration(&did, body.used)?;
        Ok(json!({ "id": did, "used": body.used }))
    })
    .await
}

async fn remove_demo(
    State(app): Shared,
    Path((id, did)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    run_mutation(&handle, "remove-demo", q.wait, StatusCode::OK, move |a| {
        a.remove_demonstration(&did)?;
        Ok(json!({ "id": did }))
    })
    .await
}

/// Training is always a job; poll `/jobs/{job}` for progress.
async fn start_training(State(app): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    // Fail fast on the common mistake instead of handing out a doomed job.
    if !handle.view().demos.iter().any(|d| d.meta.used && d.frames > 0) {
        return Err(SessionError::EmptyDataset.into());
    }
    let job = handle.spawn_job("train", |a, job| {
        a.train(&mut |b, l| job.progress(b, l))?;
        Ok(json!({ "trial": a.trial, "checksum": a.weight_hash() }))
    });
    Ok((StatusCode::ACCEPTED, Json(job.status())).into_response())
}

async fn list_jobs(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    Ok(Json(json!({ "jobs": session(&app, id).await?.jobs() })))
}

async fn get_job(State(app): Shared, Path((id, job)): Path<(String, String)>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let job = handle.job(&job).ok_or_else(|| ApiError::not_found("job", &job))?;
    Ok(Json(job.status()).into_response())
}

async fn cancel_job(State(app): Shared, Path((id, job)): Path<(String, String)>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let job = handle.job(&job).ok_or_else(|| ApiError::not_found("job", &job))?;
    job.cancel();
    Ok((StatusCode::ACCEPTED, Json(job.status())).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub structured: bool,
    pub summary: Option<String>,
    pub source: Option<String>,
    pub structure_hash: Option<String>,
    pub message: Option<String>,
}

async fn summary(State(app): Shared, Path(id): Path<String>) -> AppResult<Json<SummaryResponse>> {
    let handle = session(&app, id).await?;
    let (mode, summary, source) = handle.read(|a| (a.mode, a.summary.clone(), a.source())).await?;
    Ok(Json(match mode {
        AgentMode::Dense => SummaryResponse {
            structured: false,
            summary: None,
            source: None,
            structure_hash: None,
            message: Some("no structured summary: this session uses the dense baseline policy".into()),
        },
        AgentMode::Structured => SummaryResponse {
            structured: true,
            structure_hash: handle.view().structure_hash.clone(),
            summary,
            source,
            message: None,
        },
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RolloutRequest {
    start: Option<StartConfig>,
    cutoff_steps: Option<u64>,
    /// Include every frame in the response.
    frames: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub eas: f64,
    pub steps: u64,
    pub n_covered: usize,
    pub n_total: usize,
    pub termination: Termination,
    pub tests: usize,
    pub version: u64,
    pub trial: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FramePacket>,
}

async fn rollout(State(app): Shared, Path(id): Path<String>, body: Bytes) -> AppResult<Response> {
    let body: RolloutRequest = optional_json(&body)?;
    let handle = session(&app, id).await?;
    let start = body.start.unwrap_or_else(StartConfig::nominal);
    let cutoff = body.cutoff_steps.unwrap_or(DEFAULT_CUTOFF_STEPS);
    if cutoff == 0 {
        return Err(ApiError::bad_request("cutoff_steps must be positive"));
    }
    let track = handle.track.clone();
    let resp = handle
        .mutate(move |a| {
            let rec = a.test_rollout(&start, cutoff)?;
            let frames = if body.frames {
                rec.frames
                    .iter()
                    .map(|s| FramePacket::new(a.version, StreamMode::Rollout, 0, &track, &s.state, s.action.clipped()))
                    .collect()
            } else {
                Vec::new()
            };
            Ok(RolloutResponse {
                eas: rec.eas,
                steps: rec.steps,
                n_covered: rec.n_covered,
                n_total: rec.n_total,
                termination: rec.termination,
                tests: a.log.tests(),
                version: a.version,
                trial: a.trial,
                frames,
            })
        })
        .await?;
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BatteryRequest {
    spec: Option<BatterySpec>,
}

async fn battery(State(app): Shared, Path(id): Path<String>, body: Bytes) -> AppResult<Response> {
    let spec = optional_json::<BatteryRequest>(&body)?.spec.unwrap_or_default();
    let handle = session(&app, id).await?;
    let resp = handle
        .mutate(move |a| {
            let row = a.run_battery(&spec)?.clone();
            let groups: std::collections::BTreeMap<_, _> = a.eval.group_means(a.eval.rows.len() - 1).into_iter().collect();
            Ok(json!({ "columns": a.eval.columns, "row": row, "groups": groups }))
        })
        .await?;
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

async fn eval_matrix(State(app): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let eval = handle.read(|a| a.eval.clone()).await?;
    Ok(Json(eval).into_response())
}

async fn submit(State(app): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    handle.mutate(|a| a.submit()).await?;
    Ok(Json(json!({ "submitted": true, "session": &*handle.view() })).into_response())
}

async fn log(State(app): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let events = handle.read(|a| a.log.events.clone()).await?;
    Ok(Json(json!({ "events": events })).into_response())
}

async fn transcripts(State(app): Shared, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&app, id).await?;
    let t = handle.read(|a| a.transcripts.clone()).await?;
    Ok(Json(json!({ "transcripts": t })).into_response())
}
