//! In-memory domain knowledge store.
//!
//! A graph holds concept nodes and the triples that connect them. Triples are
//! grouped into ordered blocks, carry a complexity weight and an optional
//! level of understanding (LoU) that is absent until the triple has been
//! introduced to the explainee. Two triples are adjacent when they share a
//! concept; distances are hop counts in that triple-triple graph.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;

/// Errors raised while loading or querying a [`KnowledgeGraph`].
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read graph file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("graph schema violation: {0}")]
    Schema(String),
    #[error("graph has no triples")]
    Empty,
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("triple `{triple}` references unknown block `{block}`")]
    UnknownBlockRef { triple: String, block: String },
    #[error("triple `{triple}` references unknown concept `{concept}`")]
    UnknownConcept { triple: String, concept: String },
    #[error("triple `{triple}` has complexity {value}, expected 1, 2 or 3")]
    InvalidComplexity { triple: String, value: u8 },
    #[error("triple `{triple}` cites unknown precondition `{precondition}`")]
    DanglingPrecondition { triple: String, precondition: String },
    #[error("precondition `{precondition}` of `{triple}` is flagged external={flagged} but lives in {actual} block")]
    PreconditionFlag {
        triple: String,
        precondition: String,
        flagged: bool,
        actual: &'static str,
    },
    #[error("cyclic preconditions: {}", .0.join(" -> "))]
    CyclicPreconditions(Vec<String>),
    #[error("unknown triple `{0}`")]
    UnknownTriple(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("triple `{0}` has not been introduced yet")]
    NotIntroduced(String),
    #[error("level of understanding {value} for `{triple}` is outside [0, 1]")]
    LouOutOfRange { triple: String, value: f64 },
}

/// Board games a triple can be compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonDomain {
    Chess,
    Tictactoe,
    Bestof4,
    Uno,
}

impl ComparisonDomain {
    pub fn display_name(self) -> &'static str {
        match self {
            ComparisonDomain::Chess => "chess",
            ComparisonDomain::Tictactoe => "TicTacToe",
            ComparisonDomain::Bestof4 => "Bestof4",
            ComparisonDomain::Uno => "UNO",
        }
    }
}

impl fmt::Display for ComparisonDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Utterance template slots a triple may provide text for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Declarative,
    Comparison,
    Repeat,
    Additional,
    Example,
    Polar,
    Summarize,
}

/// Direction of explainee feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Precondition {
    pub id: String,
    /// True when the precondition lives in another block.
    #[serde(default)]
    pub external: bool,
}

/// One information unit of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub id: String,
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub complexity: u8,
    pub block: String,
    #[serde(default = "default_true")]
    pub mandatory: bool,
    #[serde(default)]
    pub preconditions: Vec<Precondition>,
    #[serde(default)]
    pub has_example: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison_domain: Option<ComparisonDomain>,
    #[serde(default)]
    pub template_texts: BTreeMap<TemplateKind, String>,
    /// Level of understanding; `None` until introduced. Never read from file.
    #[serde(skip)]
    pub lou: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl Triple {
    pub fn concepts(&self) -> [&str; 2] {
        [self.subject.as_str(), self.object.as_str()]
    }

    pub fn internal_preconditions(&self) -> impl Iterator<Item = &str> {
        self.preconditions
            .iter()
            .filter(|p| !p.external)
            .map(|p| p.id.as_str())
    }
}

/// On-disk graph document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub concepts: Vec<Concept>,
    pub blocks: Vec<String>,
    pub triples: Vec<Triple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockStatus {
    pub grounded_count: usize,
    pub total_count: usize,
    pub complete: bool,
}

/// The graph shipped with the crate, addressable by id.
pub const BUILTIN_GRAPHS: &[(&str, &str)] = &[("quarto", include_str!("../fixtures/quarto.json"))];

/// A validated knowledge graph with per-triple understanding state.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    concepts: BTreeMap<String, Concept>,
    blocks: Vec<String>,
    triples: Vec<Triple>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    distances: Vec<Vec<Option<u32>>>,
}

impl KnowledgeGraph {
    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Schema(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Loads a shipped graph by id (e.g. `quarto`).
    pub fn builtin(id: &str) -> Option<Self> {
        BUILTIN_GRAPHS
            .iter()
            .find(|(name, _)| *name == id)
            .map(|(_, text)| Self::from_json_str(text).expect("shipped graph is valid"))
    }

    /// Resolves either a shipped graph id or a path on disk.
    pub fn resolve(spec: &str) -> Result<Self, GraphError> {
        match Self::builtin(spec) {
            Some(g) => Ok(g),
            None => Self::load(spec),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        if doc.triples.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut concepts = BTreeMap::new();
        for c in doc.concepts {
            if concepts.contains_key(&c.id) {
                return Err(GraphError::Duplicate { kind: "concept", id: c.id });
            }
            concepts.insert(c.id.clone(), c);
        }
        let mut seen_blocks = HashSet::new();
        for b in &doc.blocks {
            if !seen_blocks.insert(b.as_str()) {
                return Err(GraphError::Duplicate { kind: "block", id: b.clone() });
            }
        }
        let mut index = HashMap::new();
        for (i, t) in doc.triples.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(GraphError::Duplicate { kind: "triple", id: t.id.clone() });
            }
        }
        for t in &doc.triples {
            if !seen_blocks.contains(t.block.as_str()) {
                return Err(GraphError::UnknownBlockRef {
                    triple: t.id.clone(),
                    block: t.block.clone(),
                });
            }
            if !(1..=3).contains(&t.complexity) {
                return Err(GraphError::InvalidComplexity {
                    triple: t.id.clone(),
                    value: t.complexity,
                });
            }
            for c in t.concepts() {
                if !concepts.contains_key(c) {
                    return Err(GraphError::UnknownConcept {
                        triple: t.id.clone(),
                        concept: c.to_string(),
                    });
                }
            }
            for p in &t.preconditions {
                let Some(&pi) = index.get(&p.id) else {
                    return Err(GraphError::DanglingPrecondition {
                        triple: t.id.clone(),
                        precondition: p.id.clone(),
                    });
                };
                let external = doc.triples[pi].block != t.block;
                if external != p.external {
                    return Err(GraphError::PreconditionFlag {
                        triple: t.id.clone(),
                        precondition: p.id.clone(),
                        flagged: p.external,
                        actual: if external { "another" } else { "the same" },
                    });
                }
            }
        }
        check_acyclic(&doc.triples, &index)?;

        let mut triples = doc.triples;
        for t in &mut triples {
            t.lou = None;
        }
        let adjacency = build_adjacency(&triples);
        let distances = (0..triples.len()).map(|s| bfs(&adjacency, s)).collect();
        Ok(Self {
            concepts,
            blocks: doc.blocks,
            triples,
            index,
            adjacency,
            distances,
        })
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            concepts: self.concepts.values().cloned().collect(),
            blocks: self.blocks.clone(),
            triples: self.triples.clone(),
        }
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn blocks(&self) -> &[String] {
        &self.blocks
    }

    /// Triples in file order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, id: &str) -> Option<&Triple> {
        self.index.get(id).map(|&i| &self.triples[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn triple_at(&self, index: usize) -> &Triple {
        &self.triples[index]
    }

    fn require(&self, id: &str) -> Result<usize, GraphError> {
        self.index_of(id)
            .ok_or_else(|| GraphError::UnknownTriple(id.to_string()))
    }

    fn require_block(&self, block: &str) -> Result<(), GraphError> {
        if self.blocks.iter().any(|b| b == block) {
            Ok(())
        } else {
            Err(GraphError::UnknownBlock(block.to_string()))
        }
    }

    /// Indices of the triples in `block`, in file order.
    pub fn block_indices(&self, block: &str) -> Vec<usize> {
        self.triples
            .iter()
            .enumerate()
            .filter(|(_, t)| t.block == block)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn neighbors(&self, index: usize) -> &[usize] {
        &self.adjacency[index]
    }

    /// Hop count between two triples by index; `None` when disconnected.
    pub fn distance_by_index(&self, a: usize, b: usize) -> Option<u32> {
        self.distances[a][b]
    }

    /// Shortest-path hop count in the triple adjacency graph; `None` means
    /// the triples lie in different components.
    pub fn triple_distance(&self, a: &str, b: &str) -> Result<Option<u32>, GraphError> {
        let ia = self.require(a)?;
        let ib = self.require(b)?;
        Ok(self.distances[ia][ib])
    }

    pub fn lou(&self, id: &str) -> Result<Option<f64>, GraphError> {
        Ok(self.triples[self.require(id)?].lou)
    }

    pub fn set_lou(&mut self, id: &str, value: f64) -> Result<(), GraphError> {
        let i = self.require(id)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(GraphError::LouOutOfRange {
                triple: id.to_string(),
                value,
            });
        }
        self.triples[i].lou = Some(value);
        Ok(())
    }

    /// Mandatory, not yet introduced triples of `block` combined into sets
    /// whose summed complexity is as close as possible to `capacity`.
    ///
    /// Sets hold one or two triples; pairs must be adjacent. Only the best
    /// tier is returned, ordered by member ids.
    pub fn candidate_provide_sets(&self, block: &str, capacity: u32) -> Vec<Vec<String>> {
        let available: Vec<usize> = self
            .block_indices(block)
            .into_iter()
            .filter(|&i| self.triples[i].mandatory && self.triples[i].lou.is_none())
            .collect();
        best_provide_sets(
            &available,
            capacity,
            |i| self.triples[i].complexity,
            |a, b| self.distances[a][b].is_some_and(|d| d <= 1),
            |i| self.triples[i].id.as_str(),
        )
        .into_iter()
        .map(|set| set.into_iter().map(|i| self.triples[i].id.clone()).collect())
        .collect()
    }

    /// Moves the LoU of every triple in `cud` towards 1 (positive) or
    /// towards 0 (negative). All ids are checked before anything changes.
    pub fn apply_feedback_to_lou(
        &mut self,
        cud: &[String],
        polarity: Polarity,
        cfg: &EngineConfig,
    ) -> Result<(), GraphError> {
        let mut targets = Vec::with_capacity(cud.len());
        for id in cud {
            let i = self.require(id)?;
            if self.triples[i].lou.is_none() {
                return Err(GraphError::NotIntroduced(id.clone()));
            }
            targets.push(i);
        }
        for i in targets {
            let lou = self.triples[i].lou.unwrap_or_default();
            self.triples[i].lou = Some(feedback_update(lou, polarity, cfg.fb_gain, cfg.fb_loss));
        }
        Ok(())
    }

    pub fn block_status(&self, block: &str, gth: f64) -> Result<BlockStatus, GraphError> {
        self.require_block(block)?;
        let mut grounded_count = 0;
        let mut total_count = 0;
        for t in self.triples.iter().filter(|t| t.block == block && t.mandatory) {
            total_count += 1;
            if t.lou.is_some_and(|l| l >= gth) {
                grounded_count += 1;
            }
        }
        Ok(BlockStatus {
            grounded_count,
            total_count,
            complete: grounded_count == total_count,
        })
    }

    /// True when every mandatory triple of every block is grounded.
    pub fn is_fully_grounded(&self, gth: f64) -> bool {
        self.triples
            .iter()
            .filter(|t| t.mandatory)
            .all(|t| t.lou.is_some_and(|l| l >= gth))
    }
}

/// Single LoU update for backchannel or substantive feedback, clamped to [0, 1].
pub fn feedback_update(lou: f64, polarity: Polarity, gain: f64, loss: f64) -> f64 {
    let next = match polarity {
        Polarity::Positive => lou + gain * (1.0 - lou),
        Polarity::Negative => lou * (1.0 - loss),
    };
    next.clamp(0.0, 1.0)
}

/// Best-tier provide sets over `available` triple indices.
pub(crate) fn best_provide_sets<'a>(
    available: &[usize],
    capacity: u32,
    complexity: impl Fn(usize) -> u8,
    adjacent: impl Fn(usize, usize) -> bool,
    id: impl Fn(usize) -> &'a str,
) -> Vec<Vec<usize>> {
    let target = capacity as i64;
    let mut best = i64::MAX;
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut consider = |set: Vec<usize>, cx: i64| {
        let gap = (cx - target).abs();
        if gap < best {
            best = gap;
            sets.clear();
        }
        if gap == best {
            sets.push(set);
        }
    };
    for (k, &a) in available.iter().enumerate() {
        consider(vec![a], complexity(a) as i64);
        for &b in &available[k + 1..] {
            if adjacent(a, b) {
                consider(vec![a, b], complexity(a) as i64 + complexity(b) as i64);
            }
        }
    }
    for set in &mut sets {
        set.sort_by(|&x, &y| id(x).cmp(id(y)));
    }
    sets.sort_by(|x, y| {
        x.iter()
            .map(|&i| id(i))
            .cmp(y.iter().map(|&i| id(i)))
    });
    sets
}

fn build_adjacency(triples: &[Triple]) -> Vec<Vec<usize>> {
    let mut by_concept: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        for c in t.concepts() {
            let list = by_concept.entry(c).or_default();
            if list.last() != Some(&i) {
                list.push(i);
            }
        }
    }
    let mut adjacency = vec![Vec::new(); triples.len()];
    for members in by_concept.values() {
        for &a in members {
            for &b in members {
                if a != b && !adjacency[a].contains(&b) {
                    adjacency[a].push(b);
                }
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adjacency.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap_or_default();
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn check_acyclic(triples: &[Triple], index: &HashMap<String, usize>) -> Result<(), GraphError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(
        i: usize,
        triples: &[Triple],
        index: &HashMap<String, usize>,
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Result<(), GraphError> {
        marks[i] = Mark::Active;
        stack.push(i);
        for p in &triples[i].preconditions {
            let j = index[&p.id];
            match marks[j] {
                Mark::Active => {
                    let start = stack.iter().position(|&s| s == j).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[start..].iter().map(|&s| triples[s].id.clone()).collect();
                    cycle.push(triples[j].id.clone());
                    return Err(GraphError::CyclicPreconditions(cycle));
                }
                Mark::New => visit(j, triples, index, marks, stack)?,
                Mark::Done => {}
            }
        }
        stack.pop();
        marks[i] = Mark::Done;
        Ok(())
    }

    let mut marks = vec![Mark::New; triples.len()];
    let mut stack = Vec::new();
    for i in 0..triples.len() {
        if marks[i] == Mark::New {
            visit(i, triples, index, &mut marks, &mut stack)?;
        }
    }
    Ok(())
}
