//! Index-based view of the per-turn MDP used during search.

use crate::config::EngineConfig;
use crate::knowledge_graph::{best_provide_sets, KnowledgeGraph};

use super::{
    answer_matches, capacity, deepen_unchecked, lou_answer, lou_provide, transition_prob, Action,
    DecisionError, MdpState, Move, MovePlan, QuestionType, UNREACHABLE_DISTANCE,
};

#[derive(Debug, Clone)]
struct Item {
    id: String,
    graph_index: usize,
    complexity: u8,
    in_block: bool,
    /// Mandatory member of the planning block; counts towards progress.
    counted: bool,
    has_example: bool,
    has_domain: bool,
    internal_preconditions: Vec<usize>,
}

/// One step in the simulated MDP. Holds at most two targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimMove {
    pub action: Action,
    pub mv: Move,
    targets: [usize; 2],
    len: u8,
    lou_next: [f64; 2],
    pub reward: f64,
    pub transition_prob: f64,
}

impl SimMove {
    pub fn targets(&self) -> &[usize] {
        &self.targets[..self.len as usize]
    }

    fn next_lou(&self) -> &[f64] {
        &self.lou_next[..self.len as usize]
    }

    fn single(action: Action, mv: Move, target: usize, lou: f64, reward: f64, t: f64) -> Self {
        Self {
            action,
            mv,
            targets: [target, usize::MAX],
            len: 1,
            lou_next: [lou, 0.0],
            reward,
            transition_prob: t,
        }
    }
}

/// Knowledge-side state inside the search tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    lou: Vec<Option<f64>>,
    question: Option<(QuestionType, usize)>,
    last: Option<usize>,
    cud: Vec<usize>,
}

impl SimState {
    pub fn lou(&self, item: usize) -> Option<f64> {
        self.lou[item]
    }

    pub fn has_question(&self) -> bool {
        self.question.is_some()
    }

    /// Exact identity of the state, for transposition lookups.
    pub(crate) fn key(&self) -> Vec<u64> {
        let mut k = Vec::with_capacity(self.lou.len() + self.cud.len() + 3);
        k.extend(self.lou.iter().map(|l| l.map_or(u64::MAX, f64::to_bits)));
        k.push(match self.question {
            None => u64::MAX,
            Some((QuestionType::Polar, i)) => (i as u64) << 1,
            Some((QuestionType::Open, i)) => ((i as u64) << 1) | 1,
        });
        k.push(self.last.map_or(u64::MAX, |i| i as u64));
        k.extend(self.cud.iter().map(|&i| i as u64));
        k
    }
}

/// Immutable per-turn planning context: PM expectations, capacity and the
/// triples that can appear in the search.
#[derive(Debug, Clone)]
pub struct PlanningModel {
    items: Vec<Item>,
    distance: Vec<Vec<f64>>,
    e: f64,
    l: f64,
    a: f64,
    capacity: u32,
    alpha: f64,
    gth: f64,
    beta: f64,
    progress_weight: f64,
    initial: SimState,
}

impl PlanningModel {
    /// Items are the block's triples plus anything the state refers to.
    /// LoU values come from the graph, overridden by the state's CuD.
    pub fn build(
        state: &MdpState,
        graph: &KnowledgeGraph,
        cfg: &EngineConfig,
    ) -> Result<Self, DecisionError> {
        let mut order: Vec<usize> = graph.block_indices(&state.block);
        if order.is_empty() && !graph.blocks().contains(&state.block) {
            return Err(crate::knowledge_graph::GraphError::UnknownBlock(state.block.clone()).into());
        }
        let mut extra: Vec<&str> = state.cud.iter().map(|(id, _)| id.as_str()).collect();
        if let Some(q) = &state.question {
            extra.push(&q.target);
        }
        if let Some(last) = &state.last_triple {
            extra.push(last);
        }
        for id in extra {
            let gi = graph
                .index_of(id)
                .ok_or_else(|| crate::knowledge_graph::GraphError::UnknownTriple(id.to_string()))?;
            if !order.contains(&gi) {
                order.push(gi);
            }
        }

        let position = |gi: usize| order.iter().position(|&x| x == gi);
        let mut items = Vec::with_capacity(order.len());
        for &gi in &order {
            let t = graph.triple_at(gi);
            let in_block = t.block == state.block;
            let internal_preconditions = t
                .internal_preconditions()
                .filter_map(|p| graph.index_of(p).and_then(position))
                .collect();
            items.push(Item {
                id: t.id.clone(),
                graph_index: gi,
                complexity: t.complexity,
                in_block,
                counted: in_block && t.mandatory,
                has_example: t.has_example,
                has_domain: t.comparison_domain.is_some(),
                internal_preconditions,
            });
        }

        let distance = order
            .iter()
            .map(|&a| {
                order
                    .iter()
                    .map(|&b| {
                        graph
                            .distance_by_index(a, b)
                            .map_or(UNREACHABLE_DISTANCE, f64::from)
                    })
                    .collect()
            })
            .collect();

        let mut lou: Vec<Option<f64>> = order.iter().map(|&gi| graph.triple_at(gi).lou).collect();
        let mut cud = Vec::with_capacity(state.cud.len());
        for (id, value) in &state.cud {
            let k = items.iter().position(|it| &it.id == id).unwrap_or_default();
            lou[k] = Some(value.clamp(0.0, 1.0));
            if !cud.contains(&k) {
                cud.push(k);
            }
        }
        let find = |id: &str| items.iter().position(|it| it.id == id);
        let question = state
            .question
            .as_ref()
            .and_then(|q| find(&q.target).map(|k| (q.kind, k)));
        let last = state.last_triple.as_deref().and_then(find);

        Ok(Self {
            capacity: capacity(state.pm.l, cfg.kappa),
            e: state.pm.e.clamp(0.0, 1.0),
            l: state.pm.l.clamp(0.0, 1.0),
            a: state.pm.a.clamp(0.0, 1.0),
            alpha: cfg.alpha,
            gth: cfg.gth,
            beta: cfg.beta,
            progress_weight: cfg.progress_weight,
            initial: SimState {
                lou,
                question,
                last,
                cud,
            },
            items,
            distance,
        })
    }

    pub fn initial_state(&self) -> SimState {
        self.initial.clone()
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|it| it.id == id)
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.items[item].id
    }

    pub fn graph_index(&self, item: usize) -> usize {
        self.items[item].graph_index
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distance[a][b]
    }

    /// True when every mandatory triple of the planning block is grounded.
    pub fn is_terminal(&self, s: &SimState) -> bool {
        self.items
            .iter()
            .zip(&s.lou)
            .filter(|(it, _)| it.counted)
            .all(|(_, l)| l.is_some_and(|l| l >= self.gth))
    }

    /// Grounding progress of the block, used as the value of search leaves.
    pub fn progress(&self, s: &SimState) -> f64 {
        let sum: f64 = self
            .items
            .iter()
            .zip(&s.lou)
            .filter(|(it, _)| it.counted)
            .map(|(_, l)| l.unwrap_or(0.0).min(self.gth) / self.gth)
            .sum();
        self.progress_weight * sum
    }

    /// Change in [`progress`](Self::progress) if `m` succeeds.
    pub fn progress_gain(&self, s: &SimState, m: &SimMove) -> f64 {
        let mut gain = 0.0;
        for (&k, &next) in m.targets().iter().zip(m.next_lou()) {
            if self.items[k].counted {
                let before = s.lou[k].unwrap_or(0.0).min(self.gth);
                gain += next.min(self.gth) - before;
            }
        }
        self.progress_weight * gain / self.gth
    }

    fn provide_reward(&self, s: &SimState, k: usize) -> f64 {
        let pre = &self.items[k].internal_preconditions;
        if pre.is_empty() {
            return 0.0;
        }
        let sum: f64 = pre.iter().map(|&p| s.lou[p].unwrap_or(0.0)).sum();
        sum / pre.len() as f64 - 1.0
    }

    fn deepen_reward(&self, s: &SimState, k: usize) -> f64 {
        let d = s.last.map_or(0.0, |last| self.distance[k][last]);
        -d - 1.0
    }

    fn deepenable(&self, s: &SimState, k: usize) -> bool {
        s.lou[k].is_some_and(|l| l > 0.0 && l < self.gth)
    }

    fn provide_available(&self, s: &SimState) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&k| self.items[k].counted && s.lou[k].is_none())
            .collect()
    }

    /// Deepening candidates: CuD plus introduced, ungrounded block triples,
    /// ordered by distance to the last utterance, then LoU, then id.
    fn deepen_pool(&self, s: &SimState) -> Vec<usize> {
        let mut pool: Vec<usize> = s.cud.iter().copied().filter(|&k| self.deepenable(s, k)).collect();
        for k in 0..self.items.len() {
            if self.items[k].in_block && self.deepenable(s, k) && !pool.contains(&k) {
                pool.push(k);
            }
        }
        let dist = |k: usize| s.last.map_or(0.0, |last| self.distance[k][last]);
        pool.sort_by(|&x, &y| {
            dist(x)
                .total_cmp(&dist(y))
                .then(s.lou[x].unwrap_or(0.0).total_cmp(&s.lou[y].unwrap_or(0.0)))
                .then_with(|| self.items[x].id.cmp(&self.items[y].id))
        });
        pool
    }

    /// Reward of `action` on `targets` per the reward rules; β when the
    /// action is not applicable.
    pub fn reward(&self, s: &SimState, action: Action, targets: &[usize]) -> f64 {
        match action {
            Action::Provide => {
                let available = self.provide_available(s);
                if available.is_empty() || targets.is_empty() {
                    return self.beta;
                }
                let sum: f64 = targets.iter().map(|&k| self.provide_reward(s, k)).sum();
                sum / targets.len() as f64
            }
            Action::Deepen => {
                if !(0..self.items.len()).any(|k| self.deepenable(s, k)) {
                    return self.beta;
                }
                match targets.first() {
                    Some(&k) => self.deepen_reward(s, k),
                    None => self.beta,
                }
            }
            Action::Answer => {
                if s.question.is_some() {
                    0.0
                } else {
                    self.beta
                }
            }
        }
    }

    /// All valid moves in `s`, in a fixed order: provide sets, then deepen
    /// candidates, then answers.
    pub fn enumerate(&self, s: &SimState) -> Vec<SimMove> {
        let mut out = Vec::new();
        let pending = s.question.is_some();

        let available = self.provide_available(s);
        let sets = best_provide_sets(
            &available,
            self.capacity,
            |k| self.items[k].complexity,
            |x, y| self.distance[x][y] <= 1.0,
            |k| self.items[k].id.as_str(),
        );
        for set in sets {
            let reward = if pending {
                self.beta
            } else {
                set.iter().map(|&k| self.provide_reward(s, k)).sum::<f64>() / set.len() as f64
            };
            let comparable = set.iter().all(|&k| self.items[k].has_domain);
            for mv in [Move::Declarative, Move::Comparison] {
                if mv == Move::Comparison && !comparable {
                    continue;
                }
                let mut m = SimMove {
                    action: Action::Provide,
                    mv,
                    targets: [usize::MAX; 2],
                    len: set.len() as u8,
                    lou_next: [0.0; 2],
                    reward,
                    transition_prob: transition_prob(Action::Provide, mv, self.a, false),
                };
                for (slot, &k) in set.iter().enumerate() {
                    m.targets[slot] = k;
                    m.lou_next[slot] = lou_provide(mv, self.e, self.items[k].complexity, self.alpha)
                        .unwrap_or(0.5);
                }
                out.push(m);
            }
        }

        for k in self.deepen_pool(s) {
            let reward = if pending { self.beta } else { self.deepen_reward(s, k) };
            let lou = s.lou[k].unwrap_or(0.0);
            let it = &self.items[k];
            for mv in [Move::Repeat, Move::Additional, Move::Example, Move::Comparison] {
                if (mv == Move::Example && !it.has_example) || (mv == Move::Comparison && !it.has_domain) {
                    continue;
                }
                let next = deepen_unchecked(mv, lou, self.e, it.complexity, self.alpha).unwrap_or(lou);
                let t = transition_prob(Action::Deepen, mv, self.a, false);
                out.push(SimMove::single(Action::Deepen, mv, k, next, reward, t));
            }
        }

        if let Some((kind, k)) = s.question {
            let lou = s.lou[k].unwrap_or(0.0);
            for &mv in Action::Answer.moves() {
                if !answer_matches(mv, kind) {
                    continue;
                }
                let next = lou_answer(mv, lou, self.l, Some(kind), self.alpha).unwrap_or(lou);
                let t = transition_prob(Action::Answer, mv, self.a, true);
                out.push(SimMove::single(Action::Answer, mv, k, next, 0.0, t));
            }
        }
        out
    }

    fn take(&self, s: &mut SimState, m: &SimMove) {
        s.cud.clear();
        s.cud.extend_from_slice(m.targets());
        s.last = m.targets().last().copied();
        if m.action == Action::Answer {
            s.question = None;
        }
    }

    /// Successor when the move reaches its intended state.
    pub fn apply_success(&self, s: &SimState, m: &SimMove) -> SimState {
        let mut next = s.clone();
        for (&k, &lou) in m.targets().iter().zip(m.next_lou()) {
            next.lou[k] = Some(lou);
        }
        self.take(&mut next, m);
        next
    }

    /// Successor under the expected-update rule `t * lou' + (1 - t) * lou`.
    pub fn apply_expected(&self, s: &mut SimState, m: &SimMove) {
        let t = m.transition_prob;
        if t <= 0.0 {
            return;
        }
        for (&k, &lou) in m.targets().iter().zip(m.next_lou()) {
            let before = s.lou[k].unwrap_or(0.0);
            s.lou[k] = Some((t * lou + (1.0 - t) * before).clamp(0.0, 1.0));
        }
        self.take(s, m);
    }

    /// Reward plus expected progress gain of one step.
    pub fn greedy_score(&self, s: &SimState, m: &SimMove) -> f64 {
        m.reward + m.transition_prob * self.progress_gain(s, m)
    }

    pub fn to_plan(&self, m: &SimMove, value: f64) -> MovePlan {
        MovePlan {
            action: m.action,
            mv: m.mv,
            targets: m.targets().iter().map(|&k| self.items[k].id.clone()).collect(),
            predicted_lou: m.next_lou().to_vec(),
            transition_prob: m.transition_prob,
            reward: m.reward,
            value,
        }
    }
}
