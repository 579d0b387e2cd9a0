//! UCT search over the per-turn MDP with explicit chance nodes.
//!
//! Every edge owns up to two outcome nodes (success, failure). An edge's
//! value is `R + t * V(success) + (1 - t) * V(failure)`; descent samples the
//! outcome with the move's transition probability. New nodes are valued by
//! a greedy rollout to the horizon, finished with the block's grounding
//! progress.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::EngineConfig;
use crate::knowledge_graph::KnowledgeGraph;

use super::model::{PlanningModel, SimMove, SimState};
use super::{Action, DecisionError, MdpState, MovePlan, UNREACHABLE_DISTANCE};

struct Edge {
    mv: SimMove,
    visits: u32,
    success: Option<usize>,
    failure: Option<usize>,
}

struct Node {
    state: SimState,
    depth: u32,
    leaf: bool,
    expanded: bool,
    edges: Vec<Edge>,
    visits: u32,
    value_sum: f64,
}


struct Search<'a> {
    model: &'a PlanningModel,
    nodes: Vec<Node>,
    /// Identical states at equal depth share one node.
    table: HashMap<(u32, Vec<u64>), usize>,
    horizon: u32,
    exploration: f64,
    q_min: f64,
    q_max: f64,
}

impl<'a> Search<'a> {
    fn node_for(&mut self, state: SimState, depth: u32) -> usize {
        let key = (depth, state.key());
        if let Some(&i) = self.table.get(&key) {
            return i;
        }
        let i = self.new_node(state, depth);
        self.table.insert(key, i);
        i
    }

    fn new_node(&mut self, state: SimState, depth: u32) -> usize {
        let leaf = depth >= self.horizon || self.model.is_terminal(&state);
        let value = if leaf {
            self.model.progress(&state)
        } else {
            self.rollout(state.clone(), depth)
        };
        self.nodes.push(Node {
            state,
            depth,
            leaf,
            expanded: false,
            edges: Vec::new(),
            visits: 1,
            value_sum: value,
        });
        self.nodes.len() - 1
    }

    /// Greedy one-step policy with expected effects, to the horizon.
    fn rollout(&self, mut state: SimState, mut depth: u32) -> f64 {
        let mut total = 0.0;
        while depth < self.horizon && !self.model.is_terminal(&state) {
            let moves = self.model.enumerate(&state);
            let mut best: Option<(f64, &SimMove)> = None;
            for m in &moves {
                let score = self.model.greedy_score(&state, m);
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, m));
                }
            }
            let Some((_, m)) = best else { break };
            total += m.reward;
            self.model.apply_expected(&mut state, m);
            depth += 1;
        }
        total + self.model.progress(&state)
    }

    fn edge_q(&self, edge: &Edge) -> f64 {
        let t = edge.mv.transition_prob;
        let v = |n: Option<usize>| n.map_or(0.0, |i| self.value(i));
        let mut q = edge.mv.reward;
        if edge.success.is_some() {
            q += t * v(edge.success);
        }
        if edge.failure.is_some() {
            q += (1.0 - t) * v(edge.failure);
        }
        q
    }

    /// Mean of the returns backed up through node `i`.
    fn value(&self, i: usize) -> f64 {
        let n = &self.nodes[i];
        if n.visits == 0 {
            0.0
        } else {
            n.value_sum / n.visits as f64
        }
    }

    fn note_q(&mut self, q: f64) {
        self.q_min = self.q_min.min(q);
        self.q_max = self.q_max.max(q);
    }

    fn expand_edge(&mut self, node: usize, e: usize) {
        let (state, depth, mv) = {
            let n = &self.nodes[node];
            (n.state.clone(), n.depth, n.edges[e].mv)
        };
        let t = mv.transition_prob;
        if t > 0.0 {
            let next = self.model.apply_success(&state, &mv);
            let child = self.node_for(next, depth + 1);
            self.nodes[node].edges[e].success = Some(child);
        }
        if t < 1.0 {
            let child = self.node_for(state, depth + 1);
            self.nodes[node].edges[e].failure = Some(child);
        }
    }

    fn select(&self, node: usize) -> usize {
        let n = &self.nodes[node];
        let ln_n = (n.visits.max(1) as f64).ln();
        let span = self.q_max - self.q_min;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, edge) in n.edges.iter().enumerate() {
            let q = self.edge_q(edge);
            let norm = if span > 0.0 { (q - self.q_min) / span } else { 0.0 };
            let score = norm + self.exploration * (ln_n / edge.visits as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }

    fn iterate(&mut self, rng: &mut ChaCha8Rng) {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut node = 0;
        loop {
            if self.nodes[node].leaf {
                break;
            }
            if !self.nodes[node].expanded {
                let moves = self.model.enumerate(&self.nodes[node].state);
                let n = &mut self.nodes[node];
                n.expanded = true;
                n.edges = moves
                    .into_iter()
                    .map(|mv| Edge {
                        mv,
                        visits: 0,
                        success: None,
                        failure: None,
                    })
                    .collect();
                if n.edges.is_empty() {
                    n.leaf = true;
                    n.value_sum = self.model.progress(&n.state) * n.visits as f64;
                    break;
                }
            }
            if let Some(e) = self.nodes[node].edges.iter().position(|e| e.visits == 0) {
                self.expand_edge(node, e);
                path.push((node, e));
                break;
            }
            let e = self.select(node);
            path.push((node, e));
            let edge = &self.nodes[node].edges[e];
            let child = match (edge.success, edge.failure) {
                (Some(s), Some(f)) => {
                    if rng.random::<f64>() < edge.mv.transition_prob {
                        s
                    } else {
                        f
                    }
                }
                (Some(s), None) => s,
                (None, Some(f)) => f,
                (None, None) => unreachable!("visited edge without outcomes"),
            };
            node = child;
        }

        for &(node, e) in path.iter().rev() {
            self.nodes[node].edges[e].visits += 1;
            let q = self.edge_q(&self.nodes[node].edges[e]);
            self.note_q(q);
            let n = &mut self.nodes[node];
            n.visits += 1;
            n.value_sum += q;
        }
    }
}

/// Runs MCTS from `state` and returns the best move and, when one exists,
/// the best move whose targets do not overlap it.
pub fn solve(
    state: &MdpState,
    graph: &KnowledgeGraph,
    cfg: &EngineConfig,
) -> Result<Vec<MovePlan>, DecisionError> {
    let model = PlanningModel::build(state, graph, cfg)?;
    let root_state = model.initial_state();
    if model.enumerate(&root_state).is_empty() {
        return Err(DecisionError::NoValidMoves);
    }
    let mut search = Search {
        model: &model,
        nodes: Vec::with_capacity(2 * cfg.mcts_iterations as usize + 1),
        table: HashMap::new(),
        horizon: cfg.horizon,
        exploration: cfg.mcts_exploration,
        q_min: f64::INFINITY,
        q_max: f64::NEG_INFINITY,
    };
    search.nodes.push(Node {
        state: root_state,
        depth: 0,
        leaf: false,
        expanded: false,
        edges: Vec::new(),
        visits: 0,
        value_sum: 0.0,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mcts_seed);
    for _ in 0..cfg.mcts_iterations {
        search.iterate(&mut rng);
    }

    let root = &search.nodes[0];
    let mut ranked: Vec<(usize, f64, u32)> = root
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.visits > 0)
        .map(|(i, e)| (i, search.edge_q(e), e.visits))
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(y.2.cmp(&x.2)).then(x.0.cmp(&y.0)));

    let mut out = Vec::with_capacity(2);
    let Some(&(first, q, _)) = ranked.first() else {
        return Err(DecisionError::NoValidMoves);
    };
    let first_mv = root.edges[first].mv;
    out.push(model.to_plan(&first_mv, q));
    if let Some(&(second, q2, _)) = ranked[1..].iter().find(|(i, _, _)| {
        let mv = &root.edges[*i].mv;
        mv.targets().iter().all(|t| !first_mv.targets().contains(t))
    }) {
        out.push(model.to_plan(&root.edges[second].mv, q2));
    }
    Ok(out)
}

/// Utterances for this turn: both plans when they share an action
/// (provide or deepen), have disjoint targets and lie at most one hop
/// apart; otherwise only the first.
pub fn combine_best(top_two: &[MovePlan], graph: &KnowledgeGraph) -> Vec<MovePlan> {
    let Some(first) = top_two.first() else {
        return Vec::new();
    };
    let mut out = vec![first.clone()];
    let Some(second) = top_two.get(1) else {
        return out;
    };
    if first.action != second.action || first.action == Action::Answer {
        return out;
    }
    if first.targets.iter().any(|t| second.targets.contains(t)) {
        return out;
    }
    let mut closest = f64::INFINITY;
    for a in &first.targets {
        for b in &second.targets {
            let d = graph
                .triple_distance(a, b)
                .ok()
                .flatten()
                .map_or(UNREACHABLE_DISTANCE, f64::from);
            closest = closest.min(d);
        }
    }
    if closest <= 1.0 {
        out.push(second.clone());
    }
    out
}
