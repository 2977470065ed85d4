//! Loopback HTTP control API.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{ConnectInfo, OriginalUri, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use protbox::keydist::Decision;
use serde::Deserialize;
use subtle::ConstantTimeEq;

use crate::dto::*;
use crate::error::{ApiError, DaemonError};
use crate::service::{Control, Service};

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    token: Arc<str>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn api_error(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
    ApiError {
        status: status.as_u16(),
        code: code.to_owned(),
        message: message.into(),
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| api_error(StatusCode::BAD_REQUEST, "BadRequest", e.body_text()))
}

/// Runs a service call on the blocking pool; sync cycles hold the engine
/// lock for as long as file I/O takes.
async fn call<T, F>(state: &AppState, f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, DaemonError> + Send + 'static,
{
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| api_error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map(Json)
        .map_err(|e| e.to_api())
}

pub fn router(service: Arc<Service>, token: &str) -> Router {
    let state = AppState {
        service,
        token: Arc::from(token),
    };
    let v1 = Router::new()
        .route("/pairs", get(list_pairs).post(add_pair))
        .route("/pairs/{id}", delete(remove_pair))
        .route("/pairs/{id}/hidden", get(hidden))
        .route("/pairs/{id}/restore", post(restore))
        .route("/pairs/{id}/policy", get(policy).put(set_policy))
        .route("/pairs/{id}/quarantine", get(quarantine))
        .route("/requests/inbound", get(inbound))
        .route("/requests/inbound/{id}/approve", post(approve))
        .route("/requests/inbound/{id}/deny", post(deny))
        .route("/requests/outbound", get(outbound))
        .route("/events", get(events))
        .route("/events/ack", post(ack))
        .route("/backup-decisions", get(backup_decisions))
        .route("/backup-decisions/{id}", post(resolve_backup_decision))
        .route("/sync", post(sync_now))
        .route_layer(middleware::from_fn_with_state(state.clone(), authorize));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { api_error(StatusCode::NOT_FOUND, "NotFound", "no such endpoint") })
        .with_state(state)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// Browsers cannot set headers on an EventSource, so the event stream also
/// takes the token as `access_token`.
fn query_token(req: &Request) -> Option<String> {
    let uri = req.extensions().get::<OriginalUri>().map_or(req.uri(), |o| &o.0);
    if uri.path() != "/v1/events" {
        return None;
    }
    uri.query()?
        .split('&')
        .find_map(|kv| kv.strip_prefix("access_token="))
        .map(str::to_owned)
}

async fn authorize(
    State(state): State<AppState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    req: Request,
    next: Next,
) -> Response {
    if !peer.ip().is_loopback() {
        return api_error(StatusCode::FORBIDDEN, "Forbidden", "loopback clients only").into_response();
    }
    let presented = bearer(req.headers()).map(str::to_owned).or_else(|| query_token(&req));
    let ok = presented.is_some_and(|t| bool::from(t.as_bytes().ct_eq(state.token.as_bytes())));
    if !ok {
        return api_error(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token").into_response();
    }
    next.run(req).await
}

async fn list_pairs(State(s): State<AppState>) -> Result<Json<Vec<PairSummary>>, ApiError> {
    call(&s, |svc| svc.pairs()).await
}

async fn add_pair(
    State(s): State<AppState>,
    payload: Result<Json<AddPair>, JsonRejection>,
) -> Result<(StatusCode, Json<PairSummary>), ApiError> {
    let req = body(payload)?;
    call(&s, move |svc| svc.add_pair(&req)).await.map(|j| (StatusCode::CREATED, j))
}

async fn remove_pair(State(s): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    call(&s, move |svc| svc.remove_pair(&id)).await.map(|_| StatusCode::NO_CONTENT)
}

async fn hidden(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<HiddenView>>, ApiError> {
    call(&s, move |svc| svc.hidden(&id)).await
}

async fn restore(
    State(s): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<RestoreRequest>, JsonRejection>,
) -> Result<Json<RestoreView>, ApiError> {
    let req = body(payload)?;
    call(&s, move |svc| svc.restore(&id, &req)).await
}

async fn policy(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<PolicyView>, ApiError> {
    call(&s, move |svc| svc.policy(&id)).await
}

async fn set_policy(
    State(s): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<PolicyUpdate>, JsonRejection>,
) -> Result<Json<PolicyView>, ApiError> {
    let req = body(payload)?;
    call(&s, move |svc| svc.set_policy(&id, &req)).await
}

async fn quarantine(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<QuarantineView>>, ApiError> {
    call(&s, move |svc| svc.quarantine(&id)).await
}

async fn inbound(State(s): State<AppState>) -> Result<Json<Vec<InboundView>>, ApiError> {
    call(&s, |svc| svc.inbound_requests()).await
}

async fn outbound(State(s): State<AppState>) -> Result<Json<Vec<OutboundView>>, ApiError> {
    call(&s, |svc| svc.outbound_requests()).await
}

async fn approve(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<DecisionView>, ApiError> {
    call(&s, move |svc| svc.decide_request(&id, Decision::Approve)).await
}

async fn deny(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<DecisionView>, ApiError> {
    call(&s, move |svc| svc.decide_request(&id, Decision::Deny)).await
}

async fn ack(State(s): State<AppState>, payload: Result<Json<Ack>, JsonRejection>) -> Result<StatusCode, ApiError> {
    let Ack { upto } = body(payload)?;
    call(&s, move |svc| svc.acknowledge_events(upto)).await.map(|_| StatusCode::NO_CONTENT)
}

async fn backup_decisions(State(s): State<AppState>) -> Result<Json<Vec<BackupDecisionView>>, ApiError> {
    call(&s, |svc| svc.backup_decisions()).await
}

async fn resolve_backup_decision(
    State(s): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<BackupChoice>, JsonRejection>,
) -> Result<Json<BackupResolution>, ApiError> {
    let BackupChoice { keep } = body(payload)?;
    call(&s, move |svc| svc.resolve_backup_decision(&id, keep)).await
}

async fn sync_now(State(s): State<AppState>) -> Result<Json<Vec<CycleView>>, ApiError> {
    call(&s, |svc| svc.sync_now()).await
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

fn wants_stream(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

/// `text/event-stream` when asked for, a JSON array otherwise. Each
/// subscriber keeps its own cursor; `Last-Event-ID` resumes a stream.
async fn events(State(s): State<AppState>, Query(q): Query<EventsQuery>, headers: HeaderMap) -> Response {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let since = resume.or(q.since).unwrap_or(0);
    if !wants_stream(&headers) {
        return call(&s, move |svc| svc.events(since)).await.into_response();
    }
    let rx = s.service.subscribe();
    let state = (since, rx, VecDeque::<EventView>::new(), s.service.clone());
    let stream = futures::stream::unfold(state, |(mut cursor, mut rx, mut pending, service)| async move {
        loop {
            if let Some(ev) = pending.pop_front() {
                let sse = SseEvent::default()
                    .id(ev.seq.to_string())
                    .event(ev.kind.clone())
                    .json_data(&ev)
                    .unwrap_or_default();
                return Some((Ok::<_, Infallible>(sse), (cursor, rx, pending, service)));
            }
            rx.borrow_and_update();
            let svc = service.clone();
            let fresh = tokio::task::spawn_blocking(move || svc.events(cursor)).await.ok()?.ok()?;
            if let Some(last) = fresh.last() {
                cursor = last.seq;
                pending.extend(fresh);
                continue;
            }
            rx.changed().await.ok()?;
        }
    });
    Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response()
}
