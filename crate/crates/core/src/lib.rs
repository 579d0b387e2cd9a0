//! Adaptive explanation engine.
//!
//! A Bayesian partner model tracks the explainee's expertise, cognitive
//! load, attentiveness and cooperativeness from their feedback. Each turn
//! a small MDP over the current block of the knowledge graph is rebuilt
//! from those estimates and solved with MCTS to pick what to say next and
//! how to say it.

pub mod config;
pub mod decision_process;
pub mod knowledge_graph;
pub mod orchestrator;
pub mod partner_model;
pub mod persona_sim;

pub use config::{ConfigError, EngineConfig, Settings};
pub use knowledge_graph::{GraphError, KnowledgeGraph, Polarity};
pub use orchestrator::{AgentTurn, FeedbackKind, RawFeedback, Session};
pub use partner_model::{DbnParameters, PartnerState, PmSnapshot};
