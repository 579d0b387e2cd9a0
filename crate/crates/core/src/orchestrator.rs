//! Per-turn interaction cycle.
//!
//! A cycle takes the explainee's feedback (possibly none), folds it into the
//! knowledge state and the partner model, plans the next utterance and
//! applies its predicted effect. Sessions are plain values owned by one
//! caller; run them in parallel by giving each its own `Session`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Settings};
use crate::decision_process::{
    combine_best, solve, Action, DecisionError, MdpState, Move, MovePlan, PendingQuestion,
    QuestionType,
};
use crate::knowledge_graph::{GraphError, KnowledgeGraph, Polarity, TemplateKind};
use crate::partner_model::{
    compute_tae, init_partner_state, observe, FeedbackObservation, PartnerModelError,
    PartnerState, PmSnapshot, TypingBaseline,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is finished")]
    Finished,
    #[error("session is still running")]
    NotDone,
    #[error("feedback refers to unknown triple `{0}`")]
    UnknownTriple(String),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    PartnerModel(#[from] PartnerModelError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error("cannot write transcript: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    None,
    BackchannelPositive,
    BackchannelNegative,
    Substantive,
}

/// Explainee feedback for one cycle as it arrives from a UI or persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeedback {
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<QuestionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_triple: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typing_time_per_char: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deletions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
}

impl RawFeedback {
    fn of_kind(kind: FeedbackKind) -> Self {
        Self {
            kind,
            question_type: None,
            target_triple: None,
            polarity: None,
            typing_time_per_char: None,
            deletions: None,
            free_text: None,
        }
    }

    pub fn none() -> Self {
        Self::of_kind(FeedbackKind::None)
    }

    pub fn positive() -> Self {
        Self::of_kind(FeedbackKind::BackchannelPositive)
    }

    pub fn negative() -> Self {
        Self::of_kind(FeedbackKind::BackchannelNegative)
    }

    pub fn question(
        question_type: QuestionType,
        target: impl Into<String>,
        polarity: Polarity,
        typing_time_per_char: f64,
        deletions: u32,
    ) -> Self {
        Self {
            question_type: Some(question_type),
            target_triple: Some(target.into()),
            polarity: Some(polarity),
            typing_time_per_char: Some(typing_time_per_char),
            deletions: Some(deletions),
            ..Self::of_kind(FeedbackKind::Substantive)
        }
    }
}

/// What the agent says in one cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTurn {
    pub cycle: u32,
    pub utterances: Vec<String>,
    pub plans: Vec<MovePlan>,
    pub pm: PmSnapshot,
    pub done: bool,
}

/// Action, move and targets of one realized plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub action: Action,
    #[serde(rename = "move")]
    pub mv: Move,
    pub targets: Vec<String>,
}

/// One line of the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub cycle: u32,
    pub feedback: FeedbackKind,
    pub observation: FeedbackObservation,
    pub pm: PmSnapshot,
    pub action: Action,
    #[serde(rename = "move")]
    pub mv: Move,
    pub targets: Vec<String>,
    pub reward: f64,
    pub transition_prob: f64,
    pub lou_after: BTreeMap<String, f64>,
    pub plans: Vec<PlanRecord>,
    pub texts: Vec<String>,
}

/// One explanation dialogue.
#[derive(Debug, Clone)]
pub struct Session {
    graph: KnowledgeGraph,
    partner: PartnerState,
    baseline: TypingBaseline,
    settings: Settings,
    cud: Vec<String>,
    question: Option<PendingQuestion>,
    last_triple: Option<String>,
    transcript: Vec<TurnRecord>,
    seed: u64,
    rng: ChaCha8Rng,
    done: bool,
    capped: bool,
}

fn mix_seed(seed: u64, cycle: u32) -> u64 {
    let mut z = seed ^ (cycle as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Session {
    /// Starts a session on a graph whose triples are not yet introduced.
    pub fn new(graph: KnowledgeGraph, settings: Settings, seed: u64) -> Result<Self, SessionError> {
        settings.validate()?;
        let partner = init_partner_state(&settings.dbn)?;
        let done = graph.is_fully_grounded(settings.engine.gth);
        Ok(Self {
            graph,
            partner,
            baseline: TypingBaseline::default(),
            cud: Vec::new(),
            question: None,
            last_triple: None,
            transcript: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, u32::MAX)),
            done,
            capped: false,
            settings,
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn partner(&self) -> &PartnerState {
        &self.partner
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn cud(&self) -> &[String] {
        &self.cud
    }

    pub fn question(&self) -> Option<&PendingQuestion> {
        self.question.as_ref()
    }

    pub fn last_triple(&self) -> Option<&str> {
        self.last_triple.as_deref()
    }

    pub fn transcript(&self) -> &[TurnRecord] {
        &self.transcript
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// True when the session stopped at the cycle cap without grounding
    /// everything.
    pub fn is_capped(&self) -> bool {
        self.capped
    }

    /// First block in file order that still has ungrounded mandatory triples.
    pub fn current_block(&self) -> Option<&str> {
        let gth = self.settings.engine.gth;
        self.graph
            .blocks()
            .iter()
            .find(|b| {
                self.graph
                    .block_status(b, gth)
                    .is_ok_and(|s| !s.complete)
            })
            .map(String::as_str)
    }

    /// Number of agent turns of a finished session.
    pub fn interaction_length(&self) -> Result<usize, SessionError> {
        if self.done {
            Ok(self.transcript.len())
        } else {
            Err(SessionError::NotDone)
        }
    }

    /// Rejects feedback that `step` would refuse, without touching the session.
    pub fn check_feedback(&self, fb: &RawFeedback) -> Result<(), SessionError> {
        if let Some(t) = &fb.target_triple {
            if self.graph.triple(t).is_none() {
                return Err(SessionError::UnknownTriple(t.clone()));
            }
        }
        if fb.kind == FeedbackKind::Substantive {
            let missing = [
                (fb.question_type.is_none(), "question_type"),
                (fb.target_triple.is_none(), "target_triple"),
                (fb.polarity.is_none(), "polarity"),
                (fb.typing_time_per_char.is_none(), "typing_time_per_char"),
                (fb.deletions.is_none(), "deletions"),
            ];
            if let Some((_, field)) = missing.iter().find(|(m, _)| *m) {
                return Err(SessionError::InvalidFeedback(format!(
                    "substantive feedback without {field}"
                )));
            }
            if fb.typing_time_per_char.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
                return Err(SessionError::InvalidFeedback(
                    "typing_time_per_char must be a non-negative number".into(),
                ));
            }
        }
        Ok(())
    }

    /// Interprets feedback: knowledge effect, question state and the
    /// observation vector for the partner model.
    fn interpret(&mut self, fb: &RawFeedback) -> Result<FeedbackObservation, SessionError> {
        let cfg = &self.settings.engine;
        let mut obs = FeedbackObservation::SILENT;
        match fb.kind {
            FeedbackKind::None => {}
            FeedbackKind::BackchannelPositive | FeedbackKind::BackchannelNegative => {
                let polarity = if fb.kind == FeedbackKind::BackchannelPositive {
                    obs.pos = true;
                    Polarity::Positive
                } else {
                    obs.neg = true;
                    Polarity::Negative
                };
                self.graph.apply_feedback_to_lou(&self.cud, polarity, cfg)?;
            }
            FeedbackKind::Substantive => {
                let target = fb.target_triple.clone().unwrap_or_default();
                let polarity = fb.polarity.unwrap_or(Polarity::Positive);
                obs.sub = true;
                obs.pos = polarity == Polarity::Positive;
                obs.neg = polarity == Polarity::Negative;
                obs.tae = compute_tae(
                    fb.typing_time_per_char.unwrap_or_default(),
                    fb.deletions.unwrap_or_default(),
                    &mut self.baseline,
                );
                if self.graph.lou(&target)?.is_some() {
                    self.graph
                        .apply_feedback_to_lou(std::slice::from_ref(&target), polarity, cfg)?;
                }
                self.question = Some(PendingQuestion {
                    kind: fb.question_type.unwrap_or(QuestionType::Polar),
                    target,
                });
            }
        }
        Ok(obs)
    }

    /// Runs one interaction cycle.
    pub fn step(&mut self, feedback: &RawFeedback) -> Result<AgentTurn, SessionError> {
        if self.done {
            return Err(SessionError::Finished);
        }
        self.check_feedback(feedback)?;
        let obs = self.interpret(feedback)?;

        // feedback alone can ground the last open triple
        if self.question.is_none() && self.graph.is_fully_grounded(self.settings.engine.gth) {
            self.done = true;
            return Ok(AgentTurn {
                cycle: self.transcript.len() as u32,
                utterances: Vec::new(),
                plans: Vec::new(),
                pm: self.partner.snapshot(),
                done: true,
            });
        }

        self.partner = match observe(&self.partner, &obs, &self.settings.dbn) {
            Ok(next) => next,
            Err(PartnerModelError::ImpossibleObservation { predicted }) => {
                log::warn!("observation {obs:?} impossible under the partner model; keeping prior");
                *predicted
            }
            Err(e) => return Err(e.into()),
        };
        let pm = self.partner.snapshot();
        let cycle = self.transcript.len() as u32 + 1;

        let block = match self.current_block() {
            Some(b) => b.to_string(),
            None => self
                .question
                .as_ref()
                .and_then(|q| self.graph.triple(&q.target))
                .map(|t| t.block.clone())
                .or_else(|| self.graph.blocks().last().cloned())
                .unwrap_or_default(),
        };
        let mut cfg = self.settings.engine.clone();
        cfg.mcts_seed = mix_seed(cfg.mcts_seed ^ self.seed, cycle);
        let state = MdpState::from_graph(
            &self.graph,
            &block,
            &cfg,
            pm,
            &self.cud,
            self.question.clone(),
            self.last_triple.clone(),
        )?;
        let top = solve(&state, &self.graph, &cfg)?;
        let plans = combine_best(&top, &self.graph);

        let mut next_cud: Vec<String> = Vec::new();
        let mut texts = Vec::with_capacity(plans.len());
        for plan in &plans {
            texts.push(realize(plan, &self.graph));
            self.apply_effects(plan)?;
            for t in &plan.targets {
                if !next_cud.contains(t) {
                    next_cud.push(t.clone());
                }
            }
            if plan.action == Action::Answer {
                if let Some(q) = &self.question {
                    if plan.targets.contains(&q.target)
                        && crate::decision_process::answer_matches(plan.mv, q.kind)
                    {
                        self.question = None;
                    }
                }
            }
        }
        self.cud = next_cud;
        self.last_triple = plans.last().and_then(|p| p.targets.last().cloned());

        let lou_after = plans
            .iter()
            .flat_map(|p| p.targets.iter())
            .filter_map(|t| {
                self.graph
                    .lou(t)
                    .ok()
                    .flatten()
                    .map(|l| (t.clone(), l))
            })
            .collect();
        let primary = &plans[0];
        self.transcript.push(TurnRecord {
            cycle,
            feedback: feedback.kind,
            observation: obs,
            pm,
            action: primary.action,
            mv: primary.mv,
            targets: plans.iter().flat_map(|p| p.targets.iter().cloned()).collect(),
            reward: plans.iter().map(|p| p.reward).sum(),
            transition_prob: primary.transition_prob,
            lou_after,
            plans: plans
                .iter()
                .map(|p| PlanRecord {
                    action: p.action,
                    mv: p.mv,
                    targets: p.targets.clone(),
                })
                .collect(),
            texts: texts.clone(),
        });

        if self.graph.is_fully_grounded(self.settings.engine.gth) {
            self.done = true;
        } else if cycle >= self.settings.engine.max_cycles {
            self.done = true;
            self.capped = true;
        }
        Ok(AgentTurn {
            cycle,
            utterances: texts,
            plans,
            pm,
            done: self.done,
        })
    }

    /// Expected update `t * lou' + (1 - t) * lou`, or a sampled success when
    /// `sampled_effects` is set.
    fn apply_effects(&mut self, plan: &MovePlan) -> Result<(), SessionError> {
        let t = plan.transition_prob;
        let success = if self.settings.engine.sampled_effects {
            self.rng.random::<f64>() < t
        } else {
            true
        };
        for (id, &predicted) in plan.targets.iter().zip(&plan.predicted_lou) {
            let before = self.graph.lou(id)?;
            let next = if self.settings.engine.sampled_effects {
                if success {
                    predicted
                } else {
                    match before {
                        Some(b) => b,
                        None => continue,
                    }
                }
            } else if t <= 0.0 {
                continue;
            } else {
                t * predicted + (1.0 - t) * before.unwrap_or(0.0)
            };
            self.graph.set_lou(id, next.clamp(0.0, 1.0))?;
        }
        Ok(())
    }

    /// Writes the transcript as one JSON object per line.
    pub fn write_transcript(&self, mut out: impl Write) -> Result<(), SessionError> {
        for record in &self.transcript {
            serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn template<'g>(graph: &'g KnowledgeGraph, id: &str, kind: TemplateKind) -> Option<&'g str> {
    graph
        .triple(id)
        .and_then(|t| t.template_texts.get(&kind))
        .map(String::as_str)
}

fn declarative(graph: &KnowledgeGraph, id: &str) -> String {
    match (template(graph, id, TemplateKind::Declarative), graph.triple(id)) {
        (Some(text), _) => text.to_string(),
        (None, Some(t)) => format!("{} {} {}.", t.subject, t.predicate.replace('_', " "), t.object),
        (None, None) => String::new(),
    }
}

fn lower_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn fallback(graph: &KnowledgeGraph, id: &str, mv: Move) -> String {
    log::warn!("no {mv} template for `{id}`; using the declarative text");
    declarative(graph, id)
}

fn realize_one(plan: &MovePlan, id: &str, graph: &KnowledgeGraph) -> String {
    let kind = plan.mv.template();
    if let Some(text) = template(graph, id, kind) {
        return match (plan.mv, graph.triple(id).and_then(|t| t.comparison_domain)) {
            (Move::Comparison, Some(domain)) => text.replace("{domain}", domain.display_name()),
            _ => text.to_string(),
        };
    }
    match plan.mv {
        Move::Polar => "Yes.".to_string(),
        Move::Summarize => format!("Indeed, {}", lower_first(&declarative(graph, id))),
        Move::Repeat => format!("To repeat: {}", declarative(graph, id)),
        Move::Declarative => declarative(graph, id),
        Move::Additional => {
            let extra = graph.index_of(id).and_then(|i| {
                graph
                    .neighbors(i)
                    .iter()
                    .map(|&n| graph.triple_at(n))
                    .find(|t| !t.mandatory)
                    .map(|t| t.id.clone())
            });
            match extra {
                Some(other) => format!("{} {}", declarative(graph, id), declarative(graph, &other)),
                None => fallback(graph, id, plan.mv),
            }
        }
        Move::Comparison | Move::Example => fallback(graph, id, plan.mv),
    }
}

/// Fills the templates of every target and joins them.
pub fn realize(plan: &MovePlan, graph: &KnowledgeGraph) -> String {
    plan.targets
        .iter()
        .map(|id| realize_one(plan, id, graph))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
