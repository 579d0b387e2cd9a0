//! Drives one explanation session over a pair of text channels.

use std::sync::Arc;
use std::time::Duration;

use explainer_core::orchestrator::SessionError;
use explainer_core::{RawFeedback, Session, Settings};
use tokio::sync::mpsc;
use tokio::time::Instant;

use crate::wire::{AgentTurnPayload, Body, SessionEnd, SessionStart, WireMessage};
use crate::ServiceState;

struct Driver {
    tx: mpsc::Sender<String>,
    id: String,
}

impl Driver {
    async fn send(&self, body: Body) -> bool {
        self.tx.send(WireMessage::new(&self.id, body).to_json()).await.is_ok()
    }

    async fn error(&self, message: impl Into<String>) -> bool {
        self.tx
            .send(WireMessage::error(Some(&self.id), message).to_json())
            .await
            .is_ok()
    }
}

/// Settings for a new session: the server defaults with the client's
/// engine overrides applied.
pub fn apply_overrides(
    base: &Settings,
    overrides: &serde_json::Map<String, serde_json::Value>,
) -> Result<Settings, String> {
    let mut engine = serde_json::to_value(&base.engine).map_err(|e| e.to_string())?;
    let fields = engine.as_object_mut().expect("engine config is an object");
    for (k, v) in overrides {
        fields.insert(k.clone(), v.clone());
    }
    let engine = serde_json::from_value(engine).map_err(|e| format!("config: {e}"))?;
    let settings = Settings {
        engine,
        dbn: base.dbn.clone(),
    };
    settings.validate().map_err(|e| e.to_string())?;
    Ok(settings)
}

/// Runs the session protocol until the session ends or the client leaves.
/// `rx` yields raw text frames from the client; replies go to `tx`.
pub async fn handle_session(state: Arc<ServiceState>, mut rx: mpsc::Receiver<String>, tx: mpsc::Sender<String>) {
    let (session, id) = loop {
        let Some(text) = rx.recv().await else { return };
        match WireMessage::parse(&text) {
            Ok(WireMessage { session_id: None, body: Body::SessionStart(start) }) => {
                match open(&state, &start) {
                    Ok(s) => break (s, state.next_session_id()),
                    Err(msg) => {
                        if tx.send(WireMessage::error(None, msg).to_json()).await.is_err() {
                            return;
                        }
                    }
                }
            }
            Ok(WireMessage { session_id: Some(sid), .. }) => {
                let _ = tx.send(WireMessage::error(Some(&sid), "unknown session_id").to_json()).await;
                return;
            }
            Ok(_) => {
                if tx.send(WireMessage::error(None, "expected session_start").to_json()).await.is_err() {
                    return;
                }
            }
            Err(e) => {
                if tx.send(WireMessage::error(None, format!("malformed message: {e}")).to_json()).await.is_err() {
                    return;
                }
            }
        }
    };
    log::info!("session {id} started");
    let driver = Driver { tx, id };
    run(&state, session, &driver, &mut rx).await;
    log::info!("session {} closed", driver.id);
}

fn open(state: &ServiceState, start: &SessionStart) -> Result<Session, String> {
    let graph = state
        .graphs
        .get(&start.graph_id)
        .ok_or_else(|| format!("unknown graph_id `{}`", start.graph_id))?
        .clone();
    let settings = apply_overrides(&state.settings, &start.config)?;
    let seed = start.seed.unwrap_or(state.default_seed);
    Session::new(graph, settings, seed).map_err(|e| e.to_string())
}

/// Runs one cycle on a blocking thread; planning is CPU bound.
async fn step(session: Session, fb: RawFeedback) -> (Session, Result<explainer_core::AgentTurn, SessionError>) {
    tokio::task::spawn_blocking(move || {
        let mut session = session;
        let r = session.step(&fb);
        (session, r)
    })
    .await
    .expect("planner thread panicked")
}

async fn run(state: &ServiceState, mut session: Session, d: &Driver, rx: &mut mpsc::Receiver<String>) {
    let mut feedback = RawFeedback::none();
    loop {
        if session.is_done() {
            let length = session.interaction_length().unwrap_or_default();
            let done = !session.is_capped();
            d.send(Body::SessionEnd(SessionEnd { done, length })).await;
            return;
        }
        let (s, result) = step(session, std::mem::replace(&mut feedback, RawFeedback::none())).await;
        session = s;
        let turn = match result {
            Ok(turn) => turn,
            Err(e) => {
                d.error(format!("session failed: {e}")).await;
                return;
            }
        };
        if let Some(payload) = AgentTurnPayload::from_turn(&turn) {
            if !d.send(Body::AgentTurn(payload)).await {
                return;
            }
        }
        if !d.send(Body::PmSnapshot(turn.pm)).await {
            return;
        }
        if session.is_done() {
            continue;
        }
        match wait_feedback(state.feedback_window, &session, d, rx).await {
            Some(fb) => feedback = fb,
            None => return,
        }
    }
}

/// Waits for the explainee's reaction to the last turn. A silent window
/// counts as no feedback; pausing stops the clock. Returns `None` when the
/// connection should close.
async fn wait_feedback(
    window: Duration,
    session: &Session,
    d: &Driver,
    rx: &mut mpsc::Receiver<String>,
) -> Option<RawFeedback> {
    let mut deadline = Some(Instant::now() + window);
    let mut remaining = window;
    loop {
        let msg = match deadline {
            Some(at) => match tokio::time::timeout_at(at, rx.recv()).await {
                Ok(msg) => msg,
                Err(_) => return Some(RawFeedback::none()),
            },
            None => rx.recv().await,
        };
        let text = msg?;
        let msg = match WireMessage::parse(&text) {
            Ok(m) => m,
            Err(e) => {
                d.error(format!("malformed message: {e}")).await;
                continue;
            }
        };
        match msg.session_id.as_deref() {
            Some(sid) if sid == d.id => {}
            Some(_) => {
                d.error("unknown session_id").await;
                return None;
            }
            None => {
                d.error("missing session_id").await;
                continue;
            }
        }
        match (classify(msg.body, session), deadline) {
            (Event::Feedback(fb), _) => return Some(fb),
            (Event::Pause, Some(at)) => {
                remaining = at.saturating_duration_since(Instant::now());
                deadline = None;
            }
            (Event::Resume, None) => deadline = Some(Instant::now() + remaining),
            (Event::Pause | Event::Resume, _) => {}
            (Event::Reject(m), _) => {
                if !d.error(m).await {
                    return None;
                }
            }
        }
    }
}

enum Event {
    Feedback(RawFeedback),
    Pause,
    Resume,
    Reject(String),
}

fn classify(body: Body, session: &Session) -> Event {
    match body {
        Body::UserFeedback(fb) => match session.check_feedback(&fb) {
            Ok(()) => Event::Feedback(fb),
            Err(e) => Event::Reject(e.to_string()),
        },
        Body::Pause => Event::Pause,
        Body::Resume => Event::Resume,
        Body::SessionStart(_) => Event::Reject("session already started".into()),
        _ => Event::Reject("message type is not accepted from clients".into()),
    }
}
