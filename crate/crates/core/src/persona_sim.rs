//! Simulated explainees and batch statistics.
//!
//! A persona is nothing but a set of feedback probabilities: how often it
//! stays silent, backchannels or asks something, and how often that feedback
//! is positive. Moody personas switch between profiles on a fixed schedule.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Settings;
use crate::decision_process::{Action, Move, QuestionType};
use crate::knowledge_graph::{KnowledgeGraph, Polarity};
use crate::orchestrator::{FeedbackKind, RawFeedback, Session, SessionError, TurnRecord};
use crate::partner_model::PmSnapshot;

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("cannot read persona file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("persona file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("persona `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("unknown persona `{0}`")]
    Unknown(String),
}

/// Feedback distribution of one persona or mood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackProfile {
    pub p_no: f64,
    pub p_bc: f64,
    pub p_s: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    /// Share of questions that are polar rather than open.
    #[serde(default = "default_polar")]
    pub p_polar: f64,
}

fn default_polar() -> f64 {
    0.7
}

fn default_duration() -> u32 {
    30
}

impl FeedbackProfile {
    pub const fn new(p_no: f64, p_bc: f64, p_s: f64, p_pos: f64, p_neg: f64) -> Self {
        Self {
            p_no,
            p_bc,
            p_s,
            p_pos,
            p_neg,
            p_polar: 0.7,
        }
    }

    fn validate(&self, name: &str) -> Result<(), PersonaError> {
        let invalid = |message: String| PersonaError::Invalid {
            name: name.to_string(),
            message,
        };
        let all = [self.p_no, self.p_bc, self.p_s, self.p_pos, self.p_neg, self.p_polar];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probabilities must lie in [0, 1]".into()));
        }
        let kinds = self.p_no + self.p_bc + self.p_s;
        if (kinds - 1.0).abs() > TOLERANCE {
            return Err(invalid(format!("p_no + p_bc + p_s = {kinds}, expected 1")));
        }
        let tendency = self.p_pos + self.p_neg;
        if (tendency - 1.0).abs() > TOLERANCE {
            return Err(invalid(format!("p_pos + p_neg = {tendency}, expected 1")));
        }
        Ok(())
    }
}

/// One entry of a mood schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mood {
    pub label: String,
    #[serde(flatten)]
    pub profile: FeedbackProfile,
    #[serde(default = "default_duration")]
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub name: String,
    #[serde(flatten)]
    pub profile: FeedbackProfile,
    /// Cycled in order when present; overrides `profile`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mode_schedule: Vec<Mood>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl PersonaConfig {
    pub fn new(name: &str, profile: FeedbackProfile) -> Self {
        Self {
            name: name.to_string(),
            profile,
            mode_schedule: Vec::new(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        self.profile.validate(&self.name)?;
        for mood in &self.mode_schedule {
            mood.profile.validate(&format!("{}/{}", self.name, mood.label))?;
            if mood.duration == 0 {
                return Err(PersonaError::Invalid {
                    name: self.name.clone(),
                    message: format!("mood `{}` has zero duration", mood.label),
                });
            }
        }
        Ok(())
    }

    /// Index into `mode_schedule` active at `cycle_index`.
    pub fn mode_index(&self, cycle_index: u32) -> Option<usize> {
        let period: u32 = self.mode_schedule.iter().map(|m| m.duration).sum();
        if period == 0 {
            return None;
        }
        let mut t = cycle_index % period;
        for (i, mood) in self.mode_schedule.iter().enumerate() {
            if t < mood.duration {
                return Some(i);
            }
            t -= mood.duration;
        }
        None
    }

    pub fn profile_at(&self, cycle_index: u32) -> &FeedbackProfile {
        match self.mode_index(cycle_index) {
            Some(i) => &self.mode_schedule[i].profile,
            None => &self.profile,
        }
    }
}

pub fn hermione() -> PersonaConfig {
    PersonaConfig::new("Hermione", FeedbackProfile::new(0.1, 0.5, 0.4, 0.9, 0.1))
}

pub fn harry() -> PersonaConfig {
    PersonaConfig::new("Harry", FeedbackProfile::new(0.4, 0.4, 0.2, 0.3, 0.7))
}

pub fn ron() -> PersonaConfig {
    PersonaConfig::new("Ron", FeedbackProfile::new(0.6, 0.3, 0.1, 0.8, 0.2))
}

pub fn neville() -> PersonaConfig {
    PersonaConfig::new("Neville", FeedbackProfile::new(0.2, 0.4, 0.4, 0.3, 0.7))
}

/// Switches mood every 30 cycles: A-C, A-S, I-S, I-C.
pub fn luna() -> PersonaConfig {
    let moods = [
        ("A-C", FeedbackProfile::new(0.1, 0.6, 0.3, 0.7, 0.3)),
        ("A-S", FeedbackProfile::new(0.1, 0.6, 0.3, 0.3, 0.7)),
        ("I-S", FeedbackProfile::new(0.7, 0.2, 0.1, 0.3, 0.7)),
        ("I-C", FeedbackProfile::new(0.7, 0.2, 0.1, 0.7, 0.3)),
    ];
    PersonaConfig {
        mode_schedule: moods
            .iter()
            .map(|(label, profile)| Mood {
                label: label.to_string(),
                profile: *profile,
                duration: 30,
            })
            .collect(),
        ..PersonaConfig::new("Luna", moods[0].1)
    }
}

/// The four consistent personas in evaluation order.
pub fn core_personas() -> Vec<PersonaConfig> {
    vec![hermione(), harry(), ron(), neville()]
}

pub fn builtin_personas() -> Vec<PersonaConfig> {
    let mut all = core_personas();
    all.push(luna());
    all
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaFile {
    persona: Vec<PersonaConfig>,
}

pub fn personas_from_toml_str(text: &str, origin: &str) -> Result<Vec<PersonaConfig>, PersonaError> {
    let file: PersonaFile = toml::from_str(text).map_err(|e| PersonaError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    for p in &file.persona {
        p.validate()?;
    }
    Ok(file.persona)
}

pub fn load_personas(path: impl AsRef<Path>) -> Result<Vec<PersonaConfig>, PersonaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    personas_from_toml_str(&text, &path.display().to_string())
}

/// `all`, a comma-separated list of built-in names, or a TOML file path.
pub fn resolve_personas(spec: &str) -> Result<Vec<PersonaConfig>, PersonaError> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(builtin_personas());
    }
    if Path::new(spec).is_file() || spec.ends_with(".toml") {
        return load_personas(spec);
    }
    let builtins = builtin_personas();
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            builtins
                .iter()
                .find(|p| p.name.eq_ignore_ascii_case(name))
                .cloned()
                .ok_or_else(|| PersonaError::Unknown(name.to_string()))
        })
        .collect()
}

/// Typing statistics that land on the intended tae class against any
/// running baseline built from the same three points (after the first).
const TYPING_HIGHER: (f64, u32) = (0.45, 4);
const TYPING_LOWER: (f64, u32) = (0.15, 0);
const TYPING_NONE: (f64, u32) = (0.45, 0);

/// Draws one cycle's feedback.
pub fn sample_feedback(
    persona: &PersonaConfig,
    cycle_index: u32,
    cud: &[String],
    last_introduced: Option<&str>,
    rng: &mut impl Rng,
) -> RawFeedback {
    let p = persona.profile_at(cycle_index);
    let u: f64 = rng.random();
    let positive = |rng: &mut dyn rand::RngCore| rng.random::<f64>() < p.p_pos;
    if u < p.p_no {
        RawFeedback::none()
    } else if u < p.p_no + p.p_bc {
        if positive(rng) {
            RawFeedback::positive()
        } else {
            RawFeedback::negative()
        }
    } else {
        let target = match cud.choose(rng) {
            Some(t) => t.clone(),
            None => match last_introduced {
                Some(t) => t.to_string(),
                None => return RawFeedback::none(),
            },
        };
        let kind = if rng.random::<f64>() < p.p_polar {
            QuestionType::Polar
        } else {
            QuestionType::Open
        };
        let polarity = if positive(rng) {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        let (time, deletions) = match rng.random_range(0..3) {
            0 => TYPING_LOWER,
            1 => TYPING_NONE,
            _ => TYPING_HIGHER,
        };
        RawFeedback::question(kind, target, polarity, time, deletions)
    }
}

/// Outcome of one simulated dialogue.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationRun {
    pub persona: String,
    pub seed: u64,
    pub length: usize,
    pub done: bool,
    pub capped: bool,
    pub substantive: usize,
    pub transcript: Vec<TurnRecord>,
}

impl SimulationRun {
    pub fn write_transcript(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.transcript {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn persona_seed(seed: u64, persona: &PersonaConfig) -> u64 {
    seed.rotate_left(21) ^ persona.rng_seed ^ 0xA076_1D64_78BD_642F
}

/// Runs one session to completion (or the cycle cap).
pub fn run_simulation(
    graph: &KnowledgeGraph,
    persona: &PersonaConfig,
    settings: &Settings,
    seed: u64,
) -> Result<SimulationRun, SessionError> {
    let mut session = Session::new(graph.clone(), settings.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(persona_seed(seed, persona));
    let mut substantive = 0;
    while !session.is_done() {
        let cycle_index = session.transcript().len() as u32;
        let fb = sample_feedback(persona, cycle_index, session.cud(), session.last_triple(), &mut rng);
        if fb.kind == FeedbackKind::Substantive {
            substantive += 1;
        }
        session.step(&fb)?;
    }
    Ok(SimulationRun {
        persona: persona.name.clone(),
        seed,
        length: session.interaction_length()?,
        done: !session.is_capped(),
        capped: session.is_capped(),
        substantive,
        transcript: session.transcript().to_vec(),
    })
}

/// Per-run tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: usize,
    pub persona: String,
    pub seed: u64,
    pub length: usize,
    pub capped: bool,
    pub substantive: usize,
    /// One count per turn, by the turn's primary action.
    pub actions: BTreeMap<Action, u64>,
    /// One count per realized plan.
    pub moves: BTreeMap<Action, BTreeMap<Move, u64>>,
    pub trajectory: Vec<PmSnapshot>,
    pub cycle_actions: Vec<(Action, Move, f64)>,
}

impl RunSummary {
    pub fn from_run(run_id: usize, run: &SimulationRun) -> Self {
        let mut actions = BTreeMap::new();
        let mut moves: BTreeMap<Action, BTreeMap<Move, u64>> = BTreeMap::new();
        for rec in &run.transcript {
            *actions.entry(rec.action).or_insert(0) += 1;
            for plan in &rec.plans {
                *moves.entry(plan.action).or_default().entry(plan.mv).or_insert(0) += 1;
            }
        }
        Self {
            run_id,
            persona: run.persona.clone(),
            seed: run.seed,
            length: run.length,
            capped: run.capped,
            substantive: run.substantive,
            actions,
            moves,
            trajectory: run.transcript.iter().map(|r| r.pm).collect(),
            cycle_actions: run
                .transcript
                .iter()
                .map(|r| (r.action, r.mv, r.reward))
                .collect(),
        }
    }

    pub fn action_count(&self, action: Action) -> u64 {
        self.actions.get(&action).copied().unwrap_or(0)
    }

    pub fn move_count(&self, action: Action, mv: Move) -> u64 {
        self.moves
            .get(&action)
            .and_then(|m| m.get(&mv))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSummary {
    pub runs: usize,
    pub capped: usize,
    pub mean_length: f64,
    pub std_length: f64,
    /// Expectations averaged over every cycle of every run.
    pub mean_pm: PmSnapshot,
    pub actions: BTreeMap<Action, u64>,
    pub moves: BTreeMap<Action, BTreeMap<Move, u64>>,
}

impl PersonaSummary {
    pub fn action_count(&self, action: Action) -> u64 {
        self.actions.get(&action).copied().unwrap_or(0)
    }

    pub fn move_count(&self, action: Action, mv: Move) -> u64 {
        self.moves
            .get(&action)
            .and_then(|m| m.get(&mv))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub runs: Vec<RunSummary>,
    pub personas: BTreeMap<String, PersonaSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BatchStats {
    /// Aggregates run summaries. Summaries are sorted by run id first, so
    /// the input order does not matter.
    pub fn from_runs(mut runs: Vec<RunSummary>) -> Self {
        runs.sort_by_key(|r| r.run_id);
        let mut grouped: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
        for r in &runs {
            grouped.entry(r.persona.clone()).or_default().push(r);
        }
        let personas = grouped
            .into_iter()
            .map(|(name, rs)| {
                let lengths: Vec<f64> = rs.iter().map(|r| r.length as f64).collect();
                let (mean_length, std_length) = mean_std(&lengths);
                let mut sum = PmSnapshot::default();
                let mut cycles = 0usize;
                let mut actions = BTreeMap::new();
                let mut moves: BTreeMap<Action, BTreeMap<Move, u64>> = BTreeMap::new();
                for r in &rs {
                    for pm in &r.trajectory {
                        sum.e += pm.e;
                        sum.l += pm.l;
                        sum.a += pm.a;
                        sum.c += pm.c;
                    }
                    cycles += r.trajectory.len();
                    for (a, n) in &r.actions {
                        *actions.entry(*a).or_insert(0) += n;
                    }
                    for (a, by_move) in &r.moves {
                        for (m, n) in by_move {
                            *moves.entry(*a).or_default().entry(*m).or_insert(0) += n;
                        }
                    }
                }
                let k = cycles.max(1) as f64;
                let summary = PersonaSummary {
                    runs: rs.len(),
                    capped: rs.iter().filter(|r| r.capped).count(),
                    mean_length,
                    std_length,
                    mean_pm: PmSnapshot {
                        e: sum.e / k,
                        l: sum.l / k,
                        a: sum.a / k,
                        c: sum.c / k,
                    },
                    actions,
                    moves,
                };
                (name, summary)
            })
            .collect();
        Self { runs, personas }
    }

    pub fn persona(&self, name: &str) -> Option<&PersonaSummary> {
        self.personas.get(name)
    }

    pub fn runs_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a RunSummary> + 'a {
        self.runs.iter().filter(move |r| r.persona == name)
    }

    /// Writes `runs.csv`, `cycles.csv` and `summary.json` into `dir`.
    pub fn write_exports(&self, dir: impl AsRef<Path>) -> Result<(), ExportError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut runs = csv::Writer::from_path(dir.join("runs.csv"))?;
        runs.write_record([
            "run_id", "persona", "seed", "length", "capped", "substantive", "provide", "deepen",
            "answer",
        ])?;
        for r in &self.runs {
            runs.write_record([
                r.run_id.to_string(),
                r.persona.clone(),
                r.seed.to_string(),
                r.length.to_string(),
                r.capped.to_string(),
                r.substantive.to_string(),
                r.action_count(Action::Provide).to_string(),
                r.action_count(Action::Deepen).to_string(),
                r.action_count(Action::Answer).to_string(),
            ])?;
        }
        runs.flush()?;

        let mut cycles = csv::Writer::from_path(dir.join("cycles.csv"))?;
        cycles.write_record([
            "run_id", "persona", "cycle", "e", "l", "a", "c", "action", "move", "reward", "length",
        ])?;
        for r in &self.runs {
            for (i, (pm, (action, mv, reward))) in r.trajectory.iter().zip(&r.cycle_actions).enumerate() {
                cycles.write_record([
                    r.run_id.to_string(),
                    r.persona.clone(),
                    (i + 1).to_string(),
                    format!("{:.6}", pm.e),
                    format!("{:.6}", pm.l),
                    format!("{:.6}", pm.a),
                    format!("{:.6}", pm.c),
                    action.to_string(),
                    mv.to_string(),
                    format!("{reward:.6}"),
                    r.length.to_string(),
                ])?;
            }
        }
        cycles.flush()?;

        let mut summary = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut summary, &self.personas)?;
        summary.write_all(b"\n")?;
        summary.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Seed of run `run` for the persona at position `persona_index`.
pub fn run_seed(base_seed: u64, persona_index: usize, run: usize) -> u64 {
    let mut z = base_seed
        ^ (persona_index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^ (z >> 33)
}

/// `n_runs` runs per persona, in parallel. Run ids are assigned persona by
/// persona in input order.
pub fn run_batch(
    graph: &KnowledgeGraph,
    personas: &[PersonaConfig],
    settings: &Settings,
    n_runs: usize,
    base_seed: u64,
) -> Result<BatchStats, SessionError> {
    let jobs: Vec<(usize, usize, usize)> = (0..personas.len())
        .flat_map(|p| (0..n_runs).map(move |r| (p * n_runs + r, p, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(run_id, p, r)| {
            let run = run_simulation(graph, &personas[p], settings, run_seed(base_seed, p, r))?;
            Ok(RunSummary::from_run(run_id, &run))
        })
        .collect::<Result<Vec<_>, SessionError>>()?;
    Ok(BatchStats::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for p in builtin_personas() {
            p.validate().unwrap();
        }
    }

    #[test]
    fn luna_mode_schedule() {
        let l = luna();
        assert_eq!(l.mode_index(0), Some(0));
        assert_eq!(l.mode_index(29), Some(0));
        assert_eq!(l.mode_index(35), Some(1));
        assert_eq!(l.mode_index(65), Some(2));
        assert_eq!(l.mode_index(95), Some(3));
        assert_eq!(l.mode_index(125), Some(0));
        assert_eq!(l.mode_schedule[1].label, "A-S");
        assert_eq!(hermione().mode_index(50), None);
    }

    #[test]
    fn silent_persona_never_speaks() {
        let p = PersonaConfig::new("Quiet", FeedbackProfile::new(1.0, 0.0, 0.0, 0.5, 0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cud = vec!["a".to_string()];
        for i in 0..200 {
            assert_eq!(sample_feedback(&p, i, &cud, None, &mut rng).kind, FeedbackKind::None);
        }
    }

    #[test]
    fn unbalanced_profile_rejected() {
        let p = PersonaConfig::new("Bad", FeedbackProfile::new(0.5, 0.5, 0.1, 0.5, 0.5));
        assert!(p.validate().is_err());
        let p = PersonaConfig::new("Bad", FeedbackProfile::new(0.5, 0.4, 0.1, 0.6, 0.5));
        assert!(p.validate().is_err());
    }

    #[test]
    fn persona_file_round_trip() {
        let text = r#"
[[persona]]
name = "Custom"
p_no = 0.2
p_bc = 0.5
p_s = 0.3
p_pos = 0.6
p_neg = 0.4

[[persona]]
name = "Moody"
p_no = 0.1
p_bc = 0.6
p_s = 0.3
p_pos = 0.7
p_neg = 0.3

[[persona.mode_schedule]]
label = "up"
p_no = 0.1
p_bc = 0.6
p_s = 0.3
p_pos = 0.7
p_neg = 0.3

[[persona.mode_schedule]]
label = "down"
p_no = 0.1
p_bc = 0.6
p_s = 0.3
p_pos = 0.3
p_neg = 0.7
duration = 10
"#;
        let ps = personas_from_toml_str(text, "inline").unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].profile.p_polar, 0.7);
        assert_eq!(ps[1].mode_index(35), Some(1));
        assert_eq!(ps[1].mode_index(40), Some(0));
    }

    #[test]
    fn resolve_names() {
        let ps = resolve_personas("hermione, Luna").unwrap();
        assert_eq!(ps[0].name, "Hermione");
        assert_eq!(ps[1].name, "Luna");
        assert!(matches!(resolve_personas("dumbledore"), Err(PersonaError::Unknown(_))));
        assert_eq!(resolve_personas("all").unwrap().len(), 5);
    }
}
