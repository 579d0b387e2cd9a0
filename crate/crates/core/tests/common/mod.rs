//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use explainer_core::decision_process::{
    enumerate_valid_moves, Action, MdpState, Move, MovePlan, PendingQuestion, QuestionType,
};
use explainer_core::partner_model::{
    joint_index, FeedbackObservation, ObservationTables, PerFeature, Tae, JOINT_STATES,
};
use explainer_core::{DbnParameters, EngineConfig, KnowledgeGraph, PmSnapshot};
use rand::Rng;

pub fn quarto() -> KnowledgeGraph {
    KnowledgeGraph::builtin("quarto").expect("shipped fixture")
}

// ---------------------------------------------------------------- DBN

fn random_dist<R: Rng>(rng: &mut R) -> [f64; 3] {
    let raw: [f64; 3] = [
        rng.random_range(0.05..1.0),
        rng.random_range(0.05..1.0),
        rng.random_range(0.05..1.0),
    ];
    let s: f64 = raw.iter().sum();
    raw.map(|x| x / s)
}

fn random_prob_table<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.02..0.98)))
}

pub fn random_params<R: Rng>(rng: &mut R) -> DbnParameters {
    DbnParameters {
        initial: PerFeature {
            expertise: random_dist(rng),
            load: random_dist(rng),
            attentiveness: random_dist(rng),
            cooperativeness: random_dist(rng),
        },
        transition: PerFeature {
            expertise: std::array::from_fn(|_| random_dist(rng)),
            load: std::array::from_fn(|_| random_dist(rng)),
            attentiveness: std::array::from_fn(|_| random_dist(rng)),
            cooperativeness: std::array::from_fn(|_| random_dist(rng)),
        },
        observation: ObservationTables {
            pos_given_expertise_attentiveness: random_prob_table(rng),
            neg_given_attentiveness: std::array::from_fn(|_| rng.random_range(0.02..0.98)),
            sub_given_cooperativeness_attentiveness: random_prob_table(rng),
            tae_given_load_expertise: std::array::from_fn(|_| {
                std::array::from_fn(|_| random_dist(rng))
            }),
        },
        value_map: [0.0, 0.5, 1.0],
    }
}

pub fn random_observation<R: Rng>(rng: &mut R) -> FeedbackObservation {
    let backchannel = rng.random_range(0..3);
    FeedbackObservation {
        pos: backchannel == 1,
        neg: backchannel == 2,
        sub: rng.random_bool(0.4),
        tae: [Tae::Lower, Tae::None, Tae::Higher][rng.random_range(0..3)],
    }
}

/// Joint state as (e, l, a, c) levels, enumerated in lexicographic order.
fn levels(s: usize) -> [usize; 4] {
    [s / 27, (s / 9) % 3, (s / 3) % 3, s % 3]
}

fn obs_likelihood(p: &DbnParameters, o: &FeedbackObservation, s: usize) -> f64 {
    let [e, l, a, c] = levels(s);
    let t = &p.observation;
    let b = |q: f64, yes: bool| if yes { q } else { 1.0 - q };
    let tae = match o.tae {
        Tae::Lower => 0,
        Tae::None => 1,
        Tae::Higher => 2,
    };
    b(t.pos_given_expertise_attentiveness[e][a], o.pos)
        * b(t.neg_given_attentiveness[a], o.neg)
        * b(t.sub_given_cooperativeness_attentiveness[c][a], o.sub)
        * t.tae_given_load_expertise[l][e][tae]
}

fn joint_transition(p: &DbnParameters, from: usize, to: usize) -> f64 {
    let f = levels(from);
    let t = levels(to);
    p.transition.expertise[f[0]][t[0]]
        * p.transition.load[f[1]][t[1]]
        * p.transition.attentiveness[f[2]][t[2]]
        * p.transition.cooperativeness[f[3]][t[3]]
}

fn prior(p: &DbnParameters, s: usize) -> f64 {
    let [e, l, a, c] = levels(s);
    p.initial.expertise[e] * p.initial.load[l] * p.initial.attentiveness[a] * p.initial.cooperativeness[c]
}

/// P(x_T | o_1..o_T) by summing over every state trajectory of length T.
/// Returned in the library's joint layout.
pub fn brute_force_posterior(p: &DbnParameters, obs: &[FeedbackObservation]) -> [f64; JOINT_STATES] {
    let n = JOINT_STATES;
    let trans: Vec<f64> = (0..n * n).map(|k| joint_transition(p, k / n, k % n)).collect();
    let lik: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| (0..n).map(|s| obs_likelihood(p, o, s)).collect())
        .collect();
    let mut unnorm = vec![0.0; n];
    let steps = obs.len();
    let mut path = vec![0usize; steps];
    // odometer over all n^steps trajectories
    loop {
        let mut w = prior(p, path[0]) * lik[0][path[0]];
        for t in 1..steps {
            if w == 0.0 {
                break;
            }
            w *= trans[path[t - 1] * n + path[t]] * lik[t][path[t]];
        }
        unnorm[path[steps - 1]] += w;
        let mut k = steps;
        loop {
            if k == 0 {
                let z: f64 = unnorm.iter().sum();
                let mut out = [0.0; JOINT_STATES];
                for (s, w) in unnorm.iter().enumerate() {
                    let [e, l, a, c] = levels(s);
                    out[joint_index(e, l, a, c)] = w / z;
                }
                return out;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
        }
    }
}

/// Expectations of (E, L, A, C) under a posterior in the library layout.
pub fn expectations(posterior: &[f64; JOINT_STATES], value_map: [f64; 3]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for e in 0..3 {
        for l in 0..3 {
            for a in 0..3 {
                for c in 0..3 {
                    let w = posterior[joint_index(e, l, a, c)];
                    out[0] += w * value_map[e];
                    out[1] += w * value_map[l];
                    out[2] += w * value_map[a];
                    out[3] += w * value_map[c];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- graph

/// Hop distances by BFS over "shares a concept" adjacency.
pub fn bfs_distances(g: &KnowledgeGraph) -> Vec<Vec<Option<u32>>> {
    let ts = g.triples();
    let n = ts.len();
    let adjacent = |a: usize, b: usize| {
        a != b && ts[a].concepts().iter().any(|c| ts[b].concepts().contains(c))
    };
    (0..n)
        .map(|src| {
            let mut d = vec![None; n];
            d[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if d[v].is_none() && adjacent(u, v) {
                        d[v] = Some(d[u].unwrap() + 1);
                        queue.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

// ---------------------------------------------------------------- MDP

/// A graph copy with random LoUs and a consistent random planning state.
pub fn random_planning_case<R: Rng>(
    base: &KnowledgeGraph,
    cfg: &EngineConfig,
    rng: &mut R,
) -> (KnowledgeGraph, MdpState) {
    loop {
        let mut g = base.clone();
        let ids: Vec<String> = g.triples().iter().map(|t| t.id.clone()).collect();
        let mut introduced = Vec::new();
        let p_intro = rng.random_range(0.1..0.9);
        for id in &ids {
            if rng.random_bool(p_intro) {
                let lou = if rng.random_bool(0.2) {
                    rng.random_range(0.8..=1.0)
                } else {
                    rng.random_range(0.01..0.8)
                };
                g.set_lou(id, lou).unwrap();
                introduced.push(id.clone());
            }
        }
        let blocks = g.blocks().to_vec();
        let block = blocks[rng.random_range(0..blocks.len())].clone();
        let pick = |rng: &mut R, pool: &[String]| pool[rng.random_range(0..pool.len())].clone();
        let mut cud = Vec::new();
        if !introduced.is_empty() {
            for _ in 0..rng.random_range(0..=2) {
                let id = pick(rng, &introduced);
                if !cud.contains(&id) {
                    cud.push(id);
                }
            }
        }
        let last = if !introduced.is_empty() && rng.random_bool(0.8) {
            Some(pick(rng, &introduced))
        } else {
            None
        };
        let question = if rng.random_bool(0.3) {
            let pool = if introduced.is_empty() || rng.random_bool(0.1) { &ids } else { &introduced };
            Some(PendingQuestion {
                kind: if rng.random_bool(0.5) { QuestionType::Polar } else { QuestionType::Open },
                target: pick(rng, pool),
            })
        } else {
            None
        };
        let pm = PmSnapshot {
            e: rng.random_range(0.0..=1.0),
            l: rng.random_range(0.0..=1.0),
            a: rng.random_range(0.0..=1.0),
            c: rng.random_range(0.0..=1.0),
        };
        let state = MdpState::from_graph(&g, &block, cfg, pm, &cud, question, last).unwrap();
        if enumerate_valid_moves(&state, &g, cfg).is_ok_and(|m| !m.is_empty()) {
            return (g, state);
        }
    }
}

fn oracle_lou(g: &KnowledgeGraph, state: &MdpState) -> BTreeMap<String, f64> {
    let mut lou: BTreeMap<String, f64> = g
        .triples()
        .iter()
        .filter_map(|t| t.lou.map(|l| (t.id.clone(), l)))
        .collect();
    for (id, l) in &state.cud {
        lou.insert(id.clone(), *l);
    }
    lou
}

fn oracle_progress(g: &KnowledgeGraph, state: &MdpState, cfg: &EngineConfig, lou: &BTreeMap<String, f64>) -> f64 {
    let sum: f64 = g
        .triples()
        .iter()
        .filter(|t| t.block == state.block && t.mandatory)
        .map(|t| lou.get(&t.id).copied().unwrap_or(0.0).min(cfg.gth) / cfg.gth)
        .sum();
    cfg.progress_weight * sum
}

fn oracle_reward(g: &KnowledgeGraph, state: &MdpState, cfg: &EngineConfig, plan: &MovePlan, lou: &BTreeMap<String, f64>) -> f64 {
    let pending = state.question.is_some();
    match plan.action {
        Action::Answer => {
            if pending {
                0.0
            } else {
                cfg.beta
            }
        }
        _ if pending => cfg.beta,
        Action::Provide => {
            let per: Vec<f64> = plan
                .targets
                .iter()
                .map(|id| {
                    let t = g.triple(id).unwrap();
                    let pre: Vec<&str> = t
                        .preconditions
                        .iter()
                        .filter(|p| !p.external)
                        .map(|p| p.id.as_str())
                        .collect();
                    if pre.is_empty() {
                        0.0
                    } else {
                        pre.iter().map(|p| lou.get(*p).copied().unwrap_or(0.0)).sum::<f64>() / pre.len() as f64
                            - 1.0
                    }
                })
                .collect();
            per.iter().sum::<f64>() / per.len() as f64
        }
        Action::Deepen => {
            let d = match &state.last_triple {
                None => 0.0,
                Some(last) => g
                    .triple_distance(&plan.targets[0], last)
                    .unwrap()
                    .map_or(10.0, f64::from),
            };
            -d - 1.0
        }
    }
}

fn oracle_next_lou(state: &MdpState, cfg: &EngineConfig, plan: &MovePlan, g: &KnowledgeGraph, before: f64, id: &str) -> f64 {
    let cx = g.triple(id).unwrap().complexity as f64;
    let (e, l) = (state.pm.e, state.pm.l);
    let a = cfg.alpha;
    let v = match (plan.action, plan.mv) {
        (Action::Provide, Move::Declarative) => (1.0 + e * a / cx) / 2.0,
        (Action::Provide, Move::Comparison) => (1.0 + e * e / cx) / 2.0,
        (Action::Deepen, Move::Repeat | Move::Example) => before + (1.0 - before) / 2.0 + e * a / cx,
        (Action::Deepen, _) => before + (1.0 - before) / 2.0 + e * e / cx,
        (Action::Answer, mv) => match (mv, state.question.as_ref().map(|q| q.kind)) {
            (Move::Polar, Some(QuestionType::Polar)) => before + (1.0 - before) * (1.0 - l),
            (Move::Summarize, Some(QuestionType::Polar)) => before + (1.0 - before) * l,
            (Move::Declarative, Some(QuestionType::Open)) => before + (1.0 - before) * a,
            _ => before,
        },
        other => panic!("illegal combination {other:?}"),
    };
    v.clamp(0.0, 1.0)
}

fn oracle_t(state: &MdpState, plan: &MovePlan) -> f64 {
    let a = state.pm.a;
    match (plan.action, plan.mv) {
        (Action::Provide, _) => 1.0,
        (Action::Deepen, Move::Repeat | Move::Additional) => (1.0 + a) / 2.0,
        (Action::Deepen, _) => a,
        (Action::Answer, _) => {
            let on_target = state
                .question
                .as_ref()
                .is_some_and(|q| plan.targets.contains(&q.target));
            if on_target {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// One-step value `R + t * Phi(success) + (1 - t) * Phi(unchanged)` of every
/// valid move, recomputed from the raw formulas.
pub fn one_step_values(g: &KnowledgeGraph, state: &MdpState, cfg: &EngineConfig) -> Vec<(MovePlan, f64)> {
    let lou = oracle_lou(g, state);
    let base = oracle_progress(g, state, cfg, &lou);
    enumerate_valid_moves(state, g, cfg)
        .unwrap()
        .into_iter()
        .map(|plan| {
            let mut after = lou.clone();
            for id in &plan.targets {
                let before = lou.get(id).copied().unwrap_or(0.0);
                after.insert(id.clone(), oracle_next_lou(state, cfg, &plan, g, before, id));
            }
            let t = oracle_t(state, &plan);
            let q = oracle_reward(g, state, cfg, &plan, &lou)
                + t * oracle_progress(g, state, cfg, &after)
                + (1.0 - t) * base;
            (plan, q)
        })
        .collect()
}
