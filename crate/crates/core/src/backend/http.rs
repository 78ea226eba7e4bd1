//! HTTP surface: assessment stream, operator events, metrics, health.

use std::convert::Infallible;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot};

use super::bus::{Bus, TOPIC_ASSESSMENT};
use super::run_loop::{Command, SharedState};
use super::session::UserEvent;
use super::BackendError;

#[derive(Debug, Clone)]
pub struct AppState {
    pub commands: mpsc::Sender<Command>,
    pub bus: Bus,
    pub shared: SharedState,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/assessment", get(stream_assessments))
        .route("/assessment/current", get(current_assessment))
        .route("/event", post(post_event))
        .route("/metrics", get(metrics))
        .route("/health", get(health))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> impl IntoResponse {
    let shared = s.shared.read().expect("shared state");
    Json(json!({ "status": "ok", "phase": shared.phase, "events": shared.events }))
}

async fn metrics(State(s): State<AppState>) -> impl IntoResponse {
    let shared = s.shared.read().expect("shared state");
    Json(json!({ "phase": shared.phase, "latency": shared.metrics }))
}

async fn current_assessment(State(s): State<AppState>) -> Response {
    let shared = s.shared.read().expect("shared state");
    match &shared.assessment {
        Some(a) => Json(a.clone()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_event(State(s): State<AppState>, Json(event): Json<UserEvent>) -> Response {
    let (tx, rx) = oneshot::channel();
    if s.commands.send(Command::User(event, tx)).await.is_err() {
        return unavailable();
    }
    match rx.await {
        Ok(Ok(phase)) => Json(json!({ "phase": phase })).into_response(),
        Ok(Err(BackendError::Protocol(e))) => {
            (StatusCode::CONFLICT, Json(json!({ "error": e.to_string() }))).into_response()
        }
        Ok(Err(e)) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
        Err(_) => unavailable(),
    }
}

fn unavailable() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": "engine stopped" }))).into_response()
}

/// Server-sent events: the open assessment first, then each new publication.
async fn stream_assessments(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.bus.subscribe();
    let first = s
        .shared
        .read()
        .expect("shared state")
        .assessment
        .as_ref()
        .and_then(|a| serde_json::to_string(a).ok());
    let head = stream::iter(first.map(|d| Ok(Event::default().event("assessment").data(d))));
    let tail = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(m) if m.topic == TOPIC_ASSESSMENT => {
                    return Some((Ok(Event::default().event("assessment").data(m.payload)), rx))
                }
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(head.chain(tail)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
