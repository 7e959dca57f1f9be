//! HTTP API over a [`Gateway`].
//!
//! | method | path | |
//! |---|---|---|
//! | POST | /instructions | submit; body is a [`SubmitRequest`] |
//! | GET | /runs | run ids and states |
//! | GET | /runs/{id} | the run record |
//! | GET | /runs/{id}/events?from= | events recorded so far |
//! | GET | /runs/{id}/events/stream?from= | server-sent events until the run ends |
//! | POST | /runs/{id}/approve | |
//! | POST | /runs/{id}/abort | |
//! | GET | /library/skills | |
//! | GET | /reports?task= | metrics report |

use std::convert::Infallible;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use locoplan_core::bt::ExecutionEvent;

use crate::record::RunState;
use crate::service::{Gateway, GatewayError, SubmitRequest};

pub fn router(gateway: Gateway) -> Router {
    Router::new()
        .route("/instructions", post(submit))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/events/stream", get(event_stream))
        .route("/runs/{id}/approve", post(approve))
        .route("/runs/{id}/abort", post(abort))
        .route("/library/skills", get(skills))
        .route("/reports", get(reports))
        .with_state(gateway)
}

pub struct ApiError(GatewayError);

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            GatewayError::EmptyInstruction => (StatusCode::BAD_REQUEST, "empty_instruction"),
            GatewayError::InvalidScene(_) => (StatusCode::BAD_REQUEST, "invalid_scene"),
            GatewayError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            GatewayError::InvalidTransition { .. } => (StatusCode::CONFLICT, "invalid_transition"),
            GatewayError::Metrics(_) => (StatusCode::NOT_FOUND, "no_matching_runs"),
            GatewayError::RunLog(_) => (StatusCode::INTERNAL_SERVER_ERROR, "run_log"),
        };
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking gateway work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, GatewayError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .expect("gateway task panicked")
        .map_err(ApiError)
}

#[derive(Serialize, Deserialize)]
pub struct StateReply {
    pub run_id: String,
    pub state: RunState,
}

async fn submit(State(gw): State<Gateway>, Json(req): Json<SubmitRequest>) -> ApiResult<Response> {
    let record = blocking(move || {
        let id = gw.submit_instruction(req)?;
        gw.get_run(&id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_runs(State(gw): State<Gateway>) -> Json<Vec<StateReply>> {
    Json(
        gw.list_runs()
            .into_iter()
            .map(|(run_id, state)| StateReply { run_id, state })
            .collect(),
    )
}

async fn get_run(State(gw): State<Gateway>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(gw.get_run(&id)?).into_response())
}

#[derive(Deserialize)]
pub struct FromQuery {
    #[serde(default)]
    pub from: usize,
}

#[derive(Serialize, Deserialize)]
pub struct EventsReply {
    pub from: usize,
    pub events: Vec<ExecutionEvent>,
    /// Index to ask for next.
    pub next: usize,
    /// True when the run is over and no more events will come.
    pub complete: bool,
}

async fn events(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<FromQuery>,
) -> ApiResult<Json<EventsReply>> {
    let record = gw.get_run(&id)?;
    let events: Vec<ExecutionEvent> = record.events.iter().skip(q.from).cloned().collect();
    Ok(Json(EventsReply {
        from: q.from,
        next: q.from + events.len(),
        complete: record.state.is_terminal(),
        events,
    }))
}

async fn event_stream(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<FromQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let mut cursor = gw.stream_events(&id, q.from)?;
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel();
    std::thread::spawn(move || loop {
        let index = cursor.position();
        let Some(e) = cursor.next_event() else { break };
        let event = Event::default()
            .id(index.to_string())
            .event("execution_event")
            .json_data(&e)
            .expect("event serializes");
        if tx.send(event).is_err() {
            break;
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn approve(State(gw): State<Gateway>, Path(id): Path<String>) -> ApiResult<Json<StateReply>> {
    let state = gw.approve(&id)?;
    Ok(Json(StateReply { run_id: id, state }))
}

async fn abort(State(gw): State<Gateway>, Path(id): Path<String>) -> ApiResult<Json<StateReply>> {
    let run_id = id.clone();
    let state = blocking(move || gw.abort(&id)).await?;
    Ok(Json(StateReply { run_id, state }))
}

async fn skills(State(gw): State<Gateway>) -> Response {
    Json(gw.library().list_skills(None)).into_response()
}

#[derive(Deserialize)]
pub struct ReportQuery {
    pub task: Option<String>,
}

async fn reports(State(gw): State<Gateway>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    Ok(Json(gw.report_metrics(q.task.as_deref())?).into_response())
}

/// Serves the API until the process is stopped.
pub async fn serve(gateway: Gateway, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(gateway)).await
}
