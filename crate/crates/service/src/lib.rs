//! Websocket service hosting interactive explanation sessions.
//!
//! One connection carries one session. `GET /ws` upgrades to the message
//! channel; `GET /graphs` and `GET /graphs/{id}` serve the loaded graphs.

pub mod session;
pub mod wire;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use explainer_core::knowledge_graph::BUILTIN_GRAPHS;
use explainer_core::{KnowledgeGraph, Settings};
use futures::{SinkExt, StreamExt};
use tokio::sync::mpsc;

pub use session::handle_session;
pub use wire::WireMessage;

pub const DEFAULT_FEEDBACK_WINDOW: Duration = Duration::from_secs(8);

/// Everything sessions share. Immutable once the server runs.
pub struct ServiceState {
    pub graphs: BTreeMap<String, KnowledgeGraph>,
    pub settings: Settings,
    pub feedback_window: Duration,
    pub default_seed: u64,
    next_id: AtomicU64,
}

impl ServiceState {
    pub fn new(graphs: BTreeMap<String, KnowledgeGraph>, settings: Settings) -> Self {
        Self {
            graphs,
            settings,
            feedback_window: DEFAULT_FEEDBACK_WINDOW,
            default_seed: 0,
            next_id: AtomicU64::new(1),
        }
    }

    /// Shipped graphs plus `extra`, which wins on id clashes.
    pub fn with_builtin_graphs(extra: impl IntoIterator<Item = (String, KnowledgeGraph)>, settings: Settings) -> Self {
        let mut graphs: BTreeMap<String, KnowledgeGraph> = BUILTIN_GRAPHS
            .iter()
            .filter_map(|(id, _)| KnowledgeGraph::builtin(id).map(|g| (id.to_string(), g)))
            .collect();
        graphs.extend(extra);
        Self::new(graphs, settings)
    }

    pub fn feedback_window(mut self, window: Duration) -> Self {
        self.feedback_window = window;
        self
    }

    pub(crate) fn next_session_id(&self) -> String {
        format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/graphs", get(list_graphs))
        .route("/graphs/{id}", get(graph_by_id))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}

async fn list_graphs(State(state): State<Arc<ServiceState>>) -> Json<Vec<String>> {
    Json(state.graphs.keys().cloned().collect())
}

async fn graph_by_id(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Response {
    match state.graphs.get(&id) {
        Some(g) => Json(g.to_document()).into_response(),
        None => (StatusCode::NOT_FOUND, format!("unknown graph `{id}`")).into_response(),
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServiceState>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: Arc<ServiceState>) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::channel::<String>(32);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(32);

    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t.to_string(),
                Message::Close(_) => break,
                _ => continue,
            };
            if in_tx.send(text).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    handle_session(state, in_rx, out_tx).await;
    let _ = writer.await;
    reader.abort();
}
