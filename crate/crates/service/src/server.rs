use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header::CONTENT_TYPE;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::error::ApiError;
use crate::protocol::{Meta, SimRequest, StreamRequest};
use crate::state::AppState;

/// Environment variable holding the default bind address.
pub const BIND_ENV: &str = "USSIM_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

pub const RESPONSE_CONTENT_TYPE: &str = "application/x-ussim-frame";

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/simulate", post(simulate))
        .route("/stream", get(stream))
        .with_state(state)
}

async fn meta(State(state): State<SharedState>) -> Json<Meta> {
    Json(state.meta().clone())
}

async fn simulate(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let req: SimRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed_request", e.to_string()))?;
    let bytes = tokio::task::spawn_blocking(move || state.simulate(&req, None))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(CONTENT_TYPE, RESPONSE_CONTENT_TYPE)], Body::from(bytes)).into_response())
}

async fn stream(State(state): State<SharedState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream_session(state, socket))
}

/// What the reader hands the worker: a pose to simulate, or an error to
/// report for an unparseable message.
#[derive(Clone, Debug)]
enum Pending {
    Request(StreamRequest),
    Malformed(ApiError),
}

/// Latest-wins session: the reader overwrites a single pending slot and the
/// worker always takes the newest entry, so poses that arrive while an
/// inference runs are dropped rather than queued.
async fn stream_session(state: SharedState, socket: WebSocket) {
    let (mut sink, mut incoming) = socket.split();
    let (tx, mut rx) = watch::channel::<Option<Pending>>(None);

    let worker = tokio::spawn(async move {
        while rx.changed().await.is_ok() {
            let Some(pending) = rx.borrow_and_update().clone() else {
                continue;
            };
            let msg = match pending {
                Pending::Request(r) => {
                    let st = Arc::clone(&state);
                    let seq = r.seq;
                    match tokio::task::spawn_blocking(move || st.simulate(&r.request(), Some(r.seq))).await {
                        Ok(Ok(bytes)) => Message::Binary(bytes.into()),
                        Ok(Err(e)) => error_message(&e, Some(seq)),
                        Err(e) => error_message(&ApiError::internal(e.to_string()), Some(seq)),
                    }
                }
                Pending::Malformed(e) => error_message(&e, None),
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = incoming.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => match String::from_utf8(b.to_vec()) {
                Ok(t) => t,
                Err(_) => continue,
            },
            Message::Close(_) => break,
            _ => continue,
        };
        let pending = match serde_json::from_str::<StreamRequest>(&text) {
            Ok(r) => Pending::Request(r),
            Err(e) => Pending::Malformed(ApiError::bad_request("malformed_request", e.to_string())),
        };
        if tx.send(Some(pending)).is_err() {
            break;
        }
    }
    drop(tx);
    let _ = worker.await;
}

fn error_message(e: &ApiError, seq: Option<u64>) -> Message {
    Message::Text(serde_json::to_string(&e.body(seq)).expect("error serializes").into())
}

/// Startup options; `bind` falls back to `USSIM_BIND`, then [`DEFAULT_BIND`].
#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub ckpt: PathBuf,
    pub phantom: Option<PathBuf>,
    pub bind: Option<String>,
}

impl ServiceConfig {
    pub fn bind_address(&self) -> Result<SocketAddr, String> {
        let raw = match &self.bind {
            Some(b) => b.clone(),
            None => std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string()),
        };
        raw.parse().map_err(|e| format!("invalid bind address {raw:?}: {e}"))
    }
}

/// Serves `state` on an already bound listener until the task is dropped.
pub async fn serve(state: SharedState, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Loads the model and phantom, binds and serves. Load and bind failures
/// are returned as readable diagnostics.
pub async fn run(cfg: ServiceConfig) -> Result<(), String> {
    let addr = cfg.bind_address()?;
    let (ckpt, phantom) = (cfg.ckpt.clone(), cfg.phantom.clone());
    let state = tokio::task::spawn_blocking(move || AppState::load(&ckpt, phantom.as_deref()))
        .await
        .map_err(|e| e.to_string())?
        .map_err(|e| format!("cannot load model: {e}"))?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| format!("cannot bind {addr}: {e}"))?;
    tracing::info!(%addr, model = %state.meta().model_id, "serving");
    serve(Arc::new(state), listener).await.map_err(|e| e.to_string())
}
