//! Probabilistic partner model.
//!
//! Four latent features (expertise, cognitive load, attentiveness,
//! cooperativeness), each on {low, medium, high}, are tracked jointly by
//! exact forward filtering over the 81 joint assignments. Every turn
//! contributes one observation vector: positive backchannel, negative
//! backchannel, substantive contribution and the typing/erasing signal.
//!
//! Observation factors:
//!
//! ```text
//! P(pos | E, A) . P(neg | A) . P(sub | C, A) . P(tae | L, E)
//! ```

mod params;
pub mod text_metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{DbnParameters, ObservationTables, PerFeature};

/// Upper bound on filtering steps per session.
pub const FILTER_HORIZON: u32 = 1000;

/// Number of joint latent assignments.
pub const JOINT_STATES: usize = 81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartnerModelError {
    #[error("{table}: row {row} is not a probability distribution (sum {sum})")]
    MalformedDistribution { table: String, row: String, sum: f64 },
    #[error("{table}: probability {value} outside [0, 1]")]
    ProbabilityOutOfRange { table: String, value: f64 },
    #[error("value map must be non-decreasing within [0, 1]")]
    InvalidValueMap,
    #[error("observation has both a positive and a negative backchannel")]
    ConflictingBackchannels,
    #[error("filtering horizon of {FILTER_HORIZON} steps reached")]
    HorizonExceeded,
    #[error("observation has zero likelihood under every latent state")]
    ImpossibleObservation { predicted: Box<PartnerState> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Expertise,
    Load,
    Attentiveness,
    Cooperativeness,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Expertise,
        Feature::Load,
        Feature::Attentiveness,
        Feature::Cooperativeness,
    ];

    fn axis(self) -> usize {
        match self {
            Feature::Expertise => 0,
            Feature::Load => 1,
            Feature::Attentiveness => 2,
            Feature::Cooperativeness => 3,
        }
    }
}

/// Typing-and-erasing observable relative to the user's running means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tae {
    Lower,
    None,
    Higher,
}

impl Tae {
    /// Column in observation tables: lower, none, higher.
    pub fn column(self) -> usize {
        match self {
            Tae::Lower => 0,
            Tae::None => 1,
            Tae::Higher => 2,
        }
    }
}

/// One turn's evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackObservation {
    pub pos: bool,
    pub neg: bool,
    pub sub: bool,
    pub tae: Tae,
}

impl FeedbackObservation {
    /// No feedback at all.
    pub const SILENT: FeedbackObservation = FeedbackObservation {
        pos: false,
        neg: false,
        sub: false,
        tae: Tae::None,
    };
}

/// Running means of the user's typing behaviour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypingBaseline {
    pub mean_time_per_char: f64,
    pub mean_deletions: f64,
    pub samples: u32,
}

impl TypingBaseline {
    pub fn record(&mut self, time_per_char: f64, deletions: f64) {
        self.samples += 1;
        let n = self.samples as f64;
        self.mean_time_per_char += (time_per_char - self.mean_time_per_char) / n;
        self.mean_deletions += (deletions - self.mean_deletions) / n;
    }
}

/// Classifies a typed contribution against the baseline, then folds the
/// sample into the baseline. Without any prior sample there is nothing to
/// compare against and the result is [`Tae::None`].
pub fn compute_tae(time_per_char: f64, deletions: u32, baseline: &mut TypingBaseline) -> Tae {
    let d = deletions as f64;
    let tae = if baseline.samples == 0 {
        Tae::None
    } else if time_per_char > baseline.mean_time_per_char && d > baseline.mean_deletions {
        Tae::Higher
    } else if time_per_char < baseline.mean_time_per_char && d < baseline.mean_deletions {
        Tae::Lower
    } else {
        Tae::None
    };
    baseline.record(time_per_char.max(0.0), d);
    tae
}

/// Expected values of the four features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PmSnapshot {
    pub e: f64,
    pub l: f64,
    pub a: f64,
    pub c: f64,
}

/// Joint posterior over (E, L, A, C).
#[derive(Debug, Clone, PartialEq)]
pub struct PartnerState {
    posterior: [f64; JOINT_STATES],
    turn_index: u32,
    value_map: [f64; 3],
}

/// Flat index of a joint assignment.
pub fn joint_index(e: usize, l: usize, a: usize, c: usize) -> usize {
    ((e * 3 + l) * 3 + a) * 3 + c
}

/// Inverse of [`joint_index`], as `[e, l, a, c]`.
pub fn joint_levels(index: usize) -> [usize; 4] {
    [index / 27, (index / 9) % 3, (index / 3) % 3, index % 3]
}

impl PartnerState {
    pub fn posterior(&self) -> &[f64; JOINT_STATES] {
        &self.posterior
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    pub fn marginal(&self, feature: Feature) -> [f64; 3] {
        let axis = feature.axis();
        let mut m = [0.0; 3];
        for (i, p) in self.posterior.iter().enumerate() {
            m[joint_levels(i)[axis]] += p;
        }
        m
    }

    /// Marginal of `feature` dotted with the value map.
    pub fn expectation(&self, feature: Feature) -> f64 {
        let m = self.marginal(feature);
        let v: f64 = m.iter().zip(self.value_map).map(|(p, x)| p * x).sum();
        v.clamp(0.0, 1.0)
    }

    pub fn snapshot(&self) -> PmSnapshot {
        PmSnapshot {
            e: self.expectation(Feature::Expertise),
            l: self.expectation(Feature::Load),
            a: self.expectation(Feature::Attentiveness),
            c: self.expectation(Feature::Cooperativeness),
        }
    }
}

/// Prior state: the product of the per-feature initial marginals.
pub fn init_partner_state(params: &DbnParameters) -> Result<PartnerState, PartnerModelError> {
    params.validate()?;
    let init = &params.initial;
    let mut posterior = [0.0; JOINT_STATES];
    for (i, p) in posterior.iter_mut().enumerate() {
        let [e, l, a, c] = joint_levels(i);
        *p = init.expertise[e] * init.load[l] * init.attentiveness[a] * init.cooperativeness[c];
    }
    normalize(&mut posterior);
    Ok(PartnerState {
        posterior,
        turn_index: 0,
        value_map: params.value_map,
    })
}

/// Applies the factored transition model, one feature axis at a time.
fn predict(posterior: &[f64; JOINT_STATES], params: &DbnParameters) -> [f64; JOINT_STATES] {
    let mut current = *posterior;
    for feature in Feature::ALL {
        let axis = feature.axis();
        let matrix = params.transition.get(feature);
        let mut next = [0.0; JOINT_STATES];
        for (i, p) in current.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let mut levels = joint_levels(i);
            let from = levels[axis];
            for (to, t) in matrix[from].iter().enumerate() {
                levels[axis] = to;
                next[joint_index(levels[0], levels[1], levels[2], levels[3])] += p * t;
            }
        }
        current = next;
    }
    current
}

/// Likelihood of `obs` for every joint state.
pub fn likelihood(obs: &FeedbackObservation, params: &DbnParameters) -> [f64; JOINT_STATES] {
    let o = &params.observation;
    let mut out = [0.0; JOINT_STATES];
    for (i, slot) in out.iter_mut().enumerate() {
        let [e, l, a, c] = joint_levels(i);
        let p_pos = o.pos_given_expertise_attentiveness[e][a];
        let p_neg = o.neg_given_attentiveness[a];
        let p_sub = o.sub_given_cooperativeness_attentiveness[c][a];
        *slot = bernoulli(p_pos, obs.pos)
            * bernoulli(p_neg, obs.neg)
            * bernoulli(p_sub, obs.sub)
            * o.tae_given_load_expertise[l][e][obs.tae.column()];
    }
    out
}

fn bernoulli(p: f64, yes: bool) -> f64 {
    if yes {
        p
    } else {
        1.0 - p
    }
}

fn normalize(p: &mut [f64; JOINT_STATES]) -> f64 {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        p.iter_mut().for_each(|x| *x /= sum);
    }
    sum
}

/// One exact filtering step.
///
/// The first observation conditions the prior directly; later ones are
/// preceded by a transition step. If the observation is impossible under
/// every state, the error carries the predicted prior so callers can carry on.
pub fn observe(
    state: &PartnerState,
    obs: &FeedbackObservation,
    params: &DbnParameters,
) -> Result<PartnerState, PartnerModelError> {
    if obs.pos && obs.neg {
        return Err(PartnerModelError::ConflictingBackchannels);
    }
    if state.turn_index >= FILTER_HORIZON {
        return Err(PartnerModelError::HorizonExceeded);
    }
    let prior = if state.turn_index == 0 {
        state.posterior
    } else {
        predict(&state.posterior, params)
    };
    let lik = likelihood(obs, params);
    let mut posterior = prior;
    for (p, l) in posterior.iter_mut().zip(lik) {
        *p *= l;
    }
    let next = |posterior| PartnerState {
        posterior,
        turn_index: state.turn_index + 1,
        value_map: state.value_map,
    };
    if normalize(&mut posterior) <= 0.0 {
        return Err(PartnerModelError::ImpossibleObservation {
            predicted: Box::new(next(prior)),
        });
    }
    Ok(next(posterior))
}
