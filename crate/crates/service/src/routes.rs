use std::convert::Infallible;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use tesim_core::config::parse_session_config;
use tesim_core::session::{Session, SessionError, SessionState, TelemetryFrame};

use crate::resource::{
    AbortResponse, ApiError, BlindedRecord, CreateRequest, IntensityRequest, IntensityResponse,
    UnblindedRecord,
};
use crate::{lock, AppState, EntryRef, UNBLIND_HEADER};

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(show))
        .route("/v1/sessions/{id}/start", post(start))
        .route("/v1/sessions/{id}/abort", post(abort))
        .route("/v1/sessions/{id}/intensity", post(intensity))
        .route("/v1/sessions/{id}/reset", post(reset))
        .route("/v1/sessions/{id}/telemetry", get(telemetry))
        .with_state(state)
}

fn unblinded(state: &AppState, headers: &HeaderMap) -> bool {
    state.token_ok(headers.get(UNBLIND_HEADER).and_then(|v| v.to_str().ok()))
}

fn find(state: &AppState, id: &str) -> Result<EntryRef, ApiError> {
    state.get(id).ok_or_else(|| ApiError::not_found(id))
}

fn session_error(e: SessionError) -> ApiError {
    match e {
        SessionError::Invalid(v) => ApiError {
            violations: Some(v.0.clone()),
            ..ApiError::unprocessable(v.to_string())
        },
        SessionError::Circuit(e) => ApiError::unprocessable(e.to_string()),
        SessionError::Waveform(e) => ApiError::unprocessable(e.to_string()),
        SessionError::Rejected(m) => ApiError::unprocessable(m),
        e @ SessionError::State { .. } => ApiError::conflict(e.to_string()),
    }
}

async fn create(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: CreateRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("body is not a create request: {e}")))?;
    let cfg = parse_session_config(&req.config)
        .map_err(|e| ApiError::bad_request(format!("config {e}")))?;
    let engine = Session::create(cfg.stim, cfg.circuit).map_err(session_error)?;
    let entry = state.insert(engine);
    let resource = lock(&entry).resource(unblinded(&state, &headers));
    Ok((StatusCode::CREATED, Json(resource)).into_response())
}

async fn list(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let open = unblinded(&state, &headers);
    let all: Vec<_> = state.all().iter().map(|e| lock(e).resource(open)).collect();
    Json(all).into_response()
}

async fn show(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let entry = find(&state, &id)?;
    let r = lock(&entry).resource(unblinded(&state, &headers));
    Ok(Json(r).into_response())
}

async fn start(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let entry = find(&state, &id)?;
    state.start(&entry)?;
    let r = lock(&entry).resource(unblinded(&state, &headers));
    Ok(Json(r).into_response())
}

async fn abort(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let entry = find(&state, &id)?;
    let mut e = lock(&entry);
    let ack = e.engine.abort().map_err(session_error)?;
    state.after_command(&mut e);
    let r = e.resource(unblinded(&state, &headers));
    Ok(Json(AbortResponse::new(r, ack)).into_response())
}

async fn intensity(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: IntensityRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("expected {{\"intensity_mA\": number}}: {e}")))?;
    let entry = find(&state, &id)?;
    let mut e = lock(&entry);
    let ack = e.engine.set_intensity(req.intensity_ma).map_err(session_error)?;
    let r = e.resource(unblinded(&state, &headers));
    Ok(Json(IntensityResponse::new(r, ack)).into_response())
}

async fn reset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let entry = find(&state, &id)?;
    let mut e = lock(&entry);
    e.engine.reset().map_err(session_error)?;
    state.after_command(&mut e);
    let r = e.resource(unblinded(&state, &headers));
    Ok(Json(r).into_response())
}

#[derive(Debug, Deserialize)]
struct TelemetryQuery {
    channel: Option<String>,
}

struct Subscriber {
    rx: tokio::sync::broadcast::Receiver<TelemetryFrame>,
    pending: Option<TelemetryFrame>,
    dropped: u64,
    done: bool,
    unblinded: bool,
    sham: bool,
}

impl Subscriber {
    fn line(&self, frame: &TelemetryFrame) -> String {
        let mut s = if self.unblinded {
            serde_json::to_string(&UnblindedRecord {
                frame: *frame,
                sham: self.sham,
                dropped: self.dropped,
            })
        } else {
            serde_json::to_string(&BlindedRecord {
                frame: frame.blinded(),
                dropped: self.dropped,
            })
        }
        .expect("frames serialise");
        s.push('\n');
        s
    }

    fn emit(&mut self, frame: TelemetryFrame) -> String {
        if frame.state.is_terminal() || frame.state == SessionState::Idle {
            self.done = true;
        }
        self.line(&frame)
    }

    async fn next(mut self) -> Option<(Result<String, Infallible>, Self)> {
        if self.done {
            return None;
        }
        if let Some(frame) = self.pending.take() {
            let line = self.emit(frame);
            return Some((Ok(line), self));
        }
        loop {
            match self.rx.recv().await {
                Ok(frame) => {
                    let line = self.emit(frame);
                    return Some((Ok(line), self));
                }
                Err(RecvError::Lagged(n)) => self.dropped += n,
                Err(RecvError::Closed) => return None,
            }
        }
    }
}

async fn telemetry(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TelemetryQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let want_unblinded = match q.channel.as_deref().unwrap_or("blinded") {
        "blinded" => false,
        "unblinded" => true,
        other => {
            return Err(ApiError::bad_request(format!(
                "unknown channel `{other}` (expected blinded or unblinded)"
            )))
        }
    };
    let entry = find(&state, &id)?;
    if want_unblinded {
        if state.config().unblind_token.is_none() {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "forbidden",
                "the unblinded channel is disabled on this service",
            ));
        }
        if !unblinded(&state, &headers) {
            return Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                format!("missing or wrong {UNBLIND_HEADER} header"),
            ));
        }
    }
    let sub = {
        let mut e = lock(&entry);
        let snapshot = e.last_published.unwrap_or_else(|| e.engine.current_frame());
        Subscriber {
            rx: e.tx.subscribe(),
            pending: Some(snapshot),
            dropped: 0,
            done: false,
            unblinded: want_unblinded,
            sham: e.engine.params().sham,
        }
    };
    let body = Body::from_stream(stream::unfold(sub, Subscriber::next));
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CACHE_CONTROL, "no-cache"),
        ],
        body,
    )
        .into_response())
}
