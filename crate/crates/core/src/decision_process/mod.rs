//! Per-turn decision process.
//!
//! Each turn the planner builds a small MDP over the current block from the
//! partner-model expectations and the knowledge state, then searches it with
//! MCTS. Actions say *what* to do (provide new information, deepen something
//! already introduced, answer a question); moves say *how*.

mod mcts;
mod model;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::knowledge_graph::{GraphError, KnowledgeGraph, TemplateKind};
use crate::partner_model::PmSnapshot;

pub use mcts::{combine_best, solve};
pub use model::{PlanningModel, SimMove, SimState};

/// Stand-in hop count for triples in different graph components.
pub const UNREACHABLE_DISTANCE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("no valid moves in the current state")]
    NoValidMoves,
    #[error("deepening requires 0 < lou < gth, got lou = {lou}")]
    DeepenPrecondition { lou: f64 },
    #[error("move {mv} is not available for action {action}")]
    IllegalMove { action: Action, mv: Move },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Provide,
    Deepen,
    Answer,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Provide, Action::Deepen, Action::Answer];

    /// Moves that can realize this action.
    pub fn moves(self) -> &'static [Move] {
        match self {
            Action::Provide => &[Move::Declarative, Move::Comparison],
            Action::Deepen => &[Move::Repeat, Move::Additional, Move::Example, Move::Comparison],
            Action::Answer => &[Move::Polar, Move::Summarize, Move::Declarative],
        }
    }

    pub fn allows(self, mv: Move) -> bool {
        self.moves().contains(&mv)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Provide => "provide",
            Action::Deepen => "deepen",
            Action::Answer => "answer",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Declarative,
    Comparison,
    Repeat,
    Additional,
    Example,
    Polar,
    Summarize,
}

impl Move {
    pub fn as_str(self) -> &'static str {
        match self {
            Move::Declarative => "declarative",
            Move::Comparison => "comparison",
            Move::Repeat => "repeat",
            Move::Additional => "additional",
            Move::Example => "example",
            Move::Polar => "polar",
            Move::Summarize => "summarize",
        }
    }

    pub fn template(self) -> TemplateKind {
        match self {
            Move::Declarative => TemplateKind::Declarative,
            Move::Comparison => TemplateKind::Comparison,
            Move::Repeat => TemplateKind::Repeat,
            Move::Additional => TemplateKind::Additional,
            Move::Example => TemplateKind::Example,
            Move::Polar => TemplateKind::Polar,
            Move::Summarize => TemplateKind::Summarize,
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Polar,
    Open,
}

/// A question the explainee asked and that still awaits its answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub kind: QuestionType,
    pub target: String,
}

/// Planning state handed to the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub block: String,
    pub grounded: usize,
    pub total: usize,
    pub question: Option<PendingQuestion>,
    pub pm: PmSnapshot,
    /// Triples under discussion with their LoU.
    pub cud: Vec<(String, f64)>,
    pub last_triple: Option<String>,
}

impl MdpState {
    /// Assembles the state from the graph's current knowledge.
    pub fn from_graph(
        graph: &KnowledgeGraph,
        block: &str,
        cfg: &EngineConfig,
        pm: PmSnapshot,
        cud: &[String],
        question: Option<PendingQuestion>,
        last_triple: Option<String>,
    ) -> Result<Self, GraphError> {
        let status = graph.block_status(block, cfg.gth)?;
        let mut pairs = Vec::with_capacity(cud.len());
        for id in cud {
            if let Some(lou) = graph.lou(id)? {
                pairs.push((id.clone(), lou));
            }
        }
        Ok(Self {
            block: block.to_string(),
            grounded: status.grounded_count,
            total: status.total_count,
            question,
            pm,
            cud: pairs,
            last_triple,
        })
    }
}

/// A chosen (action, move) pair with its predicted effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovePlan {
    pub action: Action,
    #[serde(rename = "move")]
    pub mv: Move,
    pub targets: Vec<String>,
    /// LoU each target reaches if the move succeeds.
    pub predicted_lou: Vec<f64>,
    pub transition_prob: f64,
    /// Immediate reward of the action.
    pub reward: f64,
    /// Search estimate of the move's value (reward plus continuation).
    pub value: f64,
}

impl MovePlan {
    pub fn predicted(&self) -> BTreeMap<&str, f64> {
        self.targets
            .iter()
            .map(String::as_str)
            .zip(self.predicted_lou.iter().copied())
            .collect()
    }
}

/// Units of information the explainee can take in at once:
/// `max(1, round((1 - E(L)) * kappa))`.
pub fn capacity(load_expectation: f64, kappa: u32) -> u32 {
    let v = ((1.0 - load_expectation.clamp(0.0, 1.0)) * kappa as f64).round();
    (v as u32).max(1)
}

/// Initial LoU after introducing a triple of complexity `cx`.
pub fn lou_provide(mv: Move, e_expect: f64, cx: u8, alpha: f64) -> Result<f64, DecisionError> {
    let cx = cx as f64;
    let lou = match mv {
        Move::Declarative => (1.0 + e_expect * alpha / cx) * 0.5,
        Move::Comparison => (1.0 + e_expect * e_expect / cx) * 0.5,
        other => {
            return Err(DecisionError::IllegalMove {
                action: Action::Provide,
                mv: other,
            })
        }
    };
    Ok(lou.clamp(0.0, 1.0))
}

/// LoU after elaborating on an introduced but ungrounded triple.
pub fn lou_deepen(
    mv: Move,
    current_lou: f64,
    e_expect: f64,
    cx: u8,
    cfg: &EngineConfig,
) -> Result<f64, DecisionError> {
    if !(current_lou > 0.0 && current_lou < cfg.gth) {
        return Err(DecisionError::DeepenPrecondition { lou: current_lou });
    }
    deepen_unchecked(mv, current_lou, e_expect, cx, cfg.alpha)
}

pub(crate) fn deepen_unchecked(
    mv: Move,
    lou: f64,
    e_expect: f64,
    cx: u8,
    alpha: f64,
) -> Result<f64, DecisionError> {
    let cx = cx as f64;
    let base = lou + (1.0 - lou) / 2.0;
    let next = match mv {
        Move::Repeat | Move::Example => base + e_expect * alpha / cx,
        Move::Additional | Move::Comparison => base + e_expect * e_expect / cx,
        other => {
            return Err(DecisionError::IllegalMove {
                action: Action::Deepen,
                mv: other,
            })
        }
    };
    Ok(next.clamp(0.0, 1.0))
}

/// LoU of the asked-about triple after answering. A move that does not fit
/// the question type leaves the LoU unchanged.
pub fn lou_answer(
    mv: Move,
    current_lou: f64,
    l_expect: f64,
    question: Option<QuestionType>,
    alpha: f64,
) -> Result<f64, DecisionError> {
    let lou = current_lou;
    let next = match (mv, question) {
        (Move::Polar, Some(QuestionType::Polar)) => lou + (1.0 - lou) * (1.0 - l_expect),
        (Move::Summarize, Some(QuestionType::Polar)) => lou + (1.0 - lou) * l_expect,
        (Move::Declarative, Some(QuestionType::Open)) => lou + (1.0 - lou) * alpha,
        (Move::Polar | Move::Summarize | Move::Declarative, _) => lou,
        (other, _) => {
            return Err(DecisionError::IllegalMove {
                action: Action::Answer,
                mv: other,
            })
        }
    };
    Ok(next.clamp(0.0, 1.0))
}

/// Whether `mv` answers a question of type `question` properly.
pub fn answer_matches(mv: Move, question: QuestionType) -> bool {
    matches!(
        (mv, question),
        (Move::Polar | Move::Summarize, QuestionType::Polar) | (Move::Declarative, QuestionType::Open)
    )
}

/// Probability that the move reaches its intended successor state; on
/// failure the state stays as it was.
pub fn transition_prob(action: Action, mv: Move, a_expect: f64, answer_on_target: bool) -> f64 {
    let a = a_expect.clamp(0.0, 1.0);
    match (action, mv) {
        (Action::Provide, _) => 1.0,
        (Action::Deepen, Move::Repeat | Move::Additional) => (1.0 + a) / 2.0,
        (Action::Deepen, _) => a,
        (Action::Answer, _) => {
            if answer_on_target {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Immediate reward of taking `action` on `targets` in `state`.
pub fn reward(
    state: &MdpState,
    action: Action,
    targets: &[String],
    graph: &KnowledgeGraph,
    cfg: &EngineConfig,
) -> Result<f64, DecisionError> {
    let model = PlanningModel::build(state, graph, cfg)?;
    let sim = model.initial_state();
    let mut idx = Vec::with_capacity(targets.len());
    for t in targets {
        idx.push(
            model
                .item_index(t)
                .ok_or_else(|| GraphError::UnknownTriple(t.clone()))?,
        );
    }
    Ok(model.reward(&sim, action, &idx))
}

/// All conversationally valid (action, move) combinations.
pub fn enumerate_valid_moves(
    state: &MdpState,
    graph: &KnowledgeGraph,
    cfg: &EngineConfig,
) -> Result<Vec<MovePlan>, DecisionError> {
    let model = PlanningModel::build(state, graph, cfg)?;
    let sim = model.initial_state();
    Ok(model
        .enumerate(&sim)
        .iter()
        .map(|m| model.to_plan(m, m.reward))
        .collect())
}
