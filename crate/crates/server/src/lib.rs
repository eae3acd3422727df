//! Reactive planning service. A receding-horizon run is stepped on a worker
//! thread while websocket clients watch plans and inject obstacle and goal
//! changes, which take effect at the next step boundary.
//!
//! Endpoints: `GET /ws` (websocket, JSON text frames), `GET /health`,
//! `GET /scenario`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc as std_mpsc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

use lazymtl::encoding::EncodingError;
use lazymtl::scenario::{EventFile, Scenario, ScenarioError};
use lazymtl::synthesis::Clock;

pub mod protocol;
mod worker;

use worker::{Worker, WorkerMsg};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("the scenario needs at least one placeholder for runtime obstacles")]
    NoPlaceholder,
    #[error("the server only handles planar workspaces")]
    NotPlanar,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Overrides the scenario's per-step planning deadline (seconds).
    pub deadline: Option<f64>,
    pub clock: Clock,
    pub max_iterations: Option<usize>,
    /// Wall time between steps at speed 1; the scenario's sample time when
    /// unset.
    pub step_period: Option<Duration>,
    pub speed: f64,
    pub start_paused: bool,
    /// Scripted geometry changes, applied as if sent by a client.
    pub events: EventFile,
    /// Where to write the session's event log when the run finishes.
    pub record: Option<PathBuf>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            deadline: None,
            clock: Clock::default(),
            max_iterations: None,
            step_period: None,
            speed: 1.0,
            start_paused: false,
            events: EventFile::default(),
            record: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    worker: std_mpsc::Sender<WorkerMsg>,
}

/// A server running in the background of the current tokio runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    worker: std_mpsc::Sender<WorkerMsg>,
    shutdown: Option<oneshot::Sender<()>>,
    http: tokio::task::JoinHandle<()>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    /// Stops accepting connections and joins the worker.
    pub async fn shutdown(mut self) {
        self.stop();
        let _ = (&mut self.http).await;
        if let Some(t) = self.thread.take() {
            let _ = tokio::task::spawn_blocking(move || t.join()).await;
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.worker.send(WorkerMsg::Shutdown);
    }

    /// Waits until the HTTP side exits (after [`RunningServer::shutdown`]
    /// from elsewhere or a fatal error).
    pub async fn wait(mut self) {
        let _ = (&mut self.http).await;
        self.stop();
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn router(worker: std_mpsc::Sender<WorkerMsg>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(health))
        .route("/scenario", get(scenario))
        .with_state(AppState { worker })
}

/// Binds `addr`, starts the worker and serves in the background.
pub async fn spawn(
    scenario: Scenario,
    opts: ServerOptions,
    addr: SocketAddr,
) -> Result<RunningServer, ServerError> {
    let events = opts.events.clone();
    let worker = Worker::new(scenario, &events, opts)?;
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = std_mpsc::channel();
    let thread = std::thread::Builder::new()
        .name("planner".into())
        .spawn(move || worker.run(rx))?;
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(tx.clone());
    let http = tokio::spawn(async move {
        let res = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await;
        if let Err(e) = res {
            tracing::error!("http server stopped: {e}");
        }
    });
    tracing::info!("listening on http://{addr} (websocket at /ws)");
    Ok(RunningServer {
        addr,
        worker: tx,
        shutdown: Some(stop_tx),
        http,
        thread: Some(thread),
    })
}

/// Serves until Ctrl-C.
pub async fn serve(
    scenario: Scenario,
    opts: ServerOptions,
    addr: SocketAddr,
) -> Result<(), ServerError> {
    let server = spawn(scenario, opts, addr).await?;
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    server.shutdown().await;
    Ok(())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "protocol": protocol::PROTOCOL_VERSION,
    }))
}

async fn scenario(State(state): State<AppState>) -> Response {
    let (tx, rx) = oneshot::channel();
    if state.worker.send(WorkerMsg::Scenario(tx)).is_err() {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    match rx.await {
        Ok(s) => Json(s).into_response(),
        Err(_) => StatusCode::SERVICE_UNAVAILABLE.into_response(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    if state
        .worker
        .send(WorkerMsg::Connect(out_tx.clone()))
        .is_err()
    {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            out = out_rx.recv() => match out {
                Some(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let msg = WorkerMsg::Command { reply: out_tx.clone(), text: text.to_string() };
                    if state.worker.send(msg).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    let msg = WorkerMsg::Command {
                        reply: out_tx.clone(),
                        text: "binary frames are not supported".into(),
                    };
                    if state.worker.send(msg).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
