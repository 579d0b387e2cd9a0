//! Messages exchanged with the browser client.
//!
//! Every message is a JSON object `{"type": ..., "session_id": ..., "payload": {...}}`.
//! `session_id` is absent only on `session_start`.

use explainer_core::decision_process::{Action, Move};
use explainer_core::{AgentTurn, PmSnapshot, RawFeedback};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Body {
    SessionStart(SessionStart),
    AgentTurn(AgentTurnPayload),
    UserFeedback(RawFeedback),
    Pause,
    Resume,
    PmSnapshot(PmSnapshot),
    SessionEnd(SessionEnd),
    Error(ErrorPayload),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStart {
    #[serde(default = "default_graph")]
    pub graph_id: String,
    /// Engine settings to override, by field name.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub config: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_graph() -> String {
    "quarto".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurnPayload {
    pub texts: Vec<String>,
    pub action: Action,
    #[serde(rename = "move")]
    pub mv: Move,
    pub targets: Vec<String>,
    pub cycle: u32,
}

impl AgentTurnPayload {
    /// The wire view of a turn; `None` for the final turn that says nothing.
    pub fn from_turn(turn: &AgentTurn) -> Option<Self> {
        let first = turn.plans.first()?;
        Some(Self {
            texts: turn.utterances.clone(),
            action: first.action,
            mv: first.mv,
            targets: turn.plans.iter().flat_map(|p| p.targets.iter().cloned()).collect(),
            cycle: turn.cycle,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEnd {
    pub done: bool,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}

impl WireMessage {
    pub fn new(session_id: &str, body: Body) -> Self {
        Self {
            session_id: Some(session_id.to_string()),
            body,
        }
    }

    pub fn start(start: SessionStart) -> Self {
        Self {
            session_id: None,
            body: Body::SessionStart(start),
        }
    }

    pub fn error(session_id: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            session_id: session_id.map(String::from),
            body: Body::Error(ErrorPayload {
                message: message.into(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
