//! The intent discovery agent's decision machinery: a compact tabular POMDP
//! abstraction for belief tracking, the persistent intent store with TTL
//! mechanics, the four-action defender action space, and reward accounting.
//!
//! The simulation realizes the transition and observation dynamics
//! generatively; the model here is the defender's abstraction of them, small
//! enough for exact Bayes filtering. The intent observation function that
//! produces candidate sets is wired in at runtime through
//! [`env::Environment`] rather than stored in the model, which keeps the
//! model plain data.

pub mod env;
pub mod planner;
pub mod qlearn;

pub use env::{Environment, EpisodeSummary, Percept, StepOutcome};
pub use planner::{GreedyMyopic, NoOpPolicy, OracleScripted, Planner, RandomPolicy};
pub use qlearn::{
    bootstrap_mean_ci, evaluate_policy, q_learning_train, EvalMetrics, QHyperparams, TabularQ,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::SecurityIntent;

/// Base action templates every model must declare; refined templates like
/// `insert:<technique id>` may be declared in addition and take precedence.
pub const TEMPLATE_NOOP: &str = "noop";
pub const TEMPLATE_TRANSIENT: &str = "transient";
pub const TEMPLATE_INSERT: &str = "insert";
pub const TEMPLATE_MODIFY: &str = "modify";

const PROB_TOLERANCE: f64 = 1e-9;
const NORMALIZER_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("observation `{0}` has zero probability under the current belief")]
    ImpossibleObservation(String),
    #[error("unknown state label `{0}`")]
    UnknownState(String),
    #[error("unknown observation label `{0}`")]
    UnknownObservation(String),
    #[error("unknown action template `{0}`")]
    UnknownTemplate(String),
    #[error("modify target is not in the intent store")]
    NotInStore,
    #[error("modify must preserve the offensive context (OT, MD)")]
    ContextViolation,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("action is not legal for the current candidates and store")]
    IllegalAction,
}

/// Tabular POMDP abstraction: finite states, observations, and action
/// templates, with row-stochastic transition and observation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpModel {
    pub states: Vec<String>,
    pub observations: Vec<String>,
    pub actions: Vec<String>,
    /// transition[a][s][s'] = probability of s' from s under template a.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// reward[s][a] = scalar utility of template a in state s.
    pub reward: Vec<Vec<f64>>,
    /// obs_fn[s][o] = probability of observing o in state s.
    pub obs_fn: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_belief: Vec<f64>,
}

impl PomdpModel {
    pub fn state_index(&self, label: &str) -> Result<usize, DecisionError> {
        self.states
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| DecisionError::UnknownState(label.to_string()))
    }

    pub fn observation_index(&self, label: &str) -> Result<usize, DecisionError> {
        self.observations
            .iter()
            .position(|o| o == label)
            .ok_or_else(|| DecisionError::UnknownObservation(label.to_string()))
    }

    /// Index of the template an action maps to: the refined template when the
    /// model declares it, the base template otherwise.
    pub fn template_index(&self, action: &DefenderAction) -> Result<usize, DecisionError> {
        let refined = action.refined_template();
        if let Some(i) = self.actions.iter().position(|a| *a == refined) {
            return Ok(i);
        }
        let base = action.base_template();
        self.actions
            .iter()
            .position(|a| a == base)
            .ok_or_else(|| DecisionError::UnknownTemplate(base.to_string()))
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let n = self.states.len();
        let o = self.observations.len();
        let a = self.actions.len();
        if n == 0 || o == 0 || a == 0 {
            return Err(DecisionError::InvalidModel(
                "states, observations, and actions must be non-empty".into(),
            ));
        }
        for base in [TEMPLATE_NOOP, TEMPLATE_TRANSIENT, TEMPLATE_INSERT, TEMPLATE_MODIFY] {
            if !self.actions.iter().any(|t| t == base) {
                return Err(DecisionError::InvalidModel(format!(
                    "base action template `{base}` missing"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(DecisionError::InvalidModel("discount must be in [0, 1]".into()));
        }
        if self.transition.len() != a
            || self.transition.iter().any(|t| t.len() != n || t.iter().any(|row| row.len() != n))
        {
            return Err(DecisionError::InvalidModel("transition table shape mismatch".into()));
        }
        if self.reward.len() != n || self.reward.iter().any(|row| row.len() != a) {
            return Err(DecisionError::InvalidModel("reward table shape mismatch".into()));
        }
        if self.obs_fn.len() != n || self.obs_fn.iter().any(|row| row.len() != o) {
            return Err(DecisionError::InvalidModel("observation table shape mismatch".into()));
        }
        if self.initial_belief.len() != n {
            return Err(DecisionError::InvalidModel("initial belief length mismatch".into()));
        }
        for table in &self.transition {
            for row in table {
                check_distribution(row, "transition row")?;
            }
        }
        for row in &self.obs_fn {
            check_distribution(row, "observation row")?;
        }
        check_distribution(&self.initial_belief, "initial belief")?;
        Ok(())
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<(), DecisionError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(DecisionError::InvalidModel(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(DecisionError::InvalidModel(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// The defender's probability distribution over model states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub probabilities: Vec<f64>,
}

impl BeliefState {
    pub fn uniform(n: usize) -> Self {
        BeliefState { probabilities: vec![1.0 / n as f64; n] }
    }

    pub fn from_model(model: &PomdpModel) -> Self {
        BeliefState { probabilities: model.initial_belief.clone() }
    }

    pub fn is_normalized(&self) -> bool {
        let sum: f64 = self.probabilities.iter().sum();
        (sum - 1.0).abs() <= PROB_TOLERANCE && self.probabilities.iter().all(|p| *p >= 0.0)
    }
}

/// One of the four defender action types. The variant declaration order is
/// the documented tie-break order (NoOp first, then transient execution,
/// insertion, modification, refined lexicographically by intent).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefenderAction {
    NoOp,
    ExecuteTransient(SecurityIntent),
    InsertPersistent(SecurityIntent),
    ModifyPersistent { old: SecurityIntent, new: SecurityIntent },
}

impl DefenderAction {
    pub fn base_template(&self) -> &'static str {
        match self {
            DefenderAction::NoOp => TEMPLATE_NOOP,
            DefenderAction::ExecuteTransient(_) => TEMPLATE_TRANSIENT,
            DefenderAction::InsertPersistent(_) => TEMPLATE_INSERT,
            DefenderAction::ModifyPersistent { .. } => TEMPLATE_MODIFY,
        }
    }

    /// Template refined by the defensive technique the action applies.
    pub fn refined_template(&self) -> String {
        match self.acted_intent() {
            Some(intent) => format!("{}:{}", self.base_template(), intent.dt),
            None => self.base_template().to_string(),
        }
    }

    /// The intent this action enforces, if any (the replacement for modify).
    pub fn acted_intent(&self) -> Option<&SecurityIntent> {
        match self {
            DefenderAction::NoOp => None,
            DefenderAction::ExecuteTransient(i) | DefenderAction::InsertPersistent(i) => Some(i),
            DefenderAction::ModifyPersistent { new, .. } => Some(new),
        }
    }
}

/// A persistent intent with its remaining rounds to live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub intent: SecurityIntent,
    pub ttl: u32,
}

/// Active persistent intents, each with a TTL. Purged entries leave at the
/// start of a round; every surviving TTL drops by one at the end of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentStore {
    pub entries: Vec<StoreEntry>,
    pub default_ttl: u32,
}

impl IntentStore {
    /// `default_ttl` must be at least 1.
    pub fn new(default_ttl: u32) -> Self {
        debug_assert!(default_ttl >= 1);
        IntentStore { entries: Vec::new(), default_ttl }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, intent: &SecurityIntent) -> bool {
        self.entries.iter().any(|e| &e.intent == intent)
    }

    pub fn ttl_of(&self, intent: &SecurityIntent) -> Option<u32> {
        self.entries.iter().find(|e| &e.intent == intent).map(|e| e.ttl)
    }

    pub fn intents(&self) -> impl Iterator<Item = &SecurityIntent> {
        self.entries.iter().map(|e| &e.intent)
    }

    /// Round-start phase: removes entries whose TTL reached zero and returns
    /// the purged intents.
    pub fn purge_expired(&mut self) -> Vec<SecurityIntent> {
        let (purged, kept): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.entries).into_iter().partition(|e| e.ttl == 0);
        self.entries = kept;
        purged.into_iter().map(|e| e.intent).collect()
    }

    /// Round-end phase: decrements every TTL by one.
    pub fn decrement_ttls(&mut self) {
        for entry in &mut self.entries {
            entry.ttl = entry.ttl.saturating_sub(1);
        }
    }
}

/// Applies a defender action to the store. Insertion (re)sets the intent's
/// TTL to the default; modification swaps the defensive measure while
/// preserving the offensive context; transient execution and no-op leave the
/// store untouched.
pub fn apply_action(store: &mut IntentStore, action: &DefenderAction) -> Result<(), DecisionError> {
    match action {
        DefenderAction::NoOp | DefenderAction::ExecuteTransient(_) => Ok(()),
        DefenderAction::InsertPersistent(intent) => {
            match store.entries.iter_mut().find(|e| &e.intent == intent) {
                Some(entry) => entry.ttl = store.default_ttl,
                None => store
                    .entries
                    .push(StoreEntry { intent: intent.clone(), ttl: store.default_ttl }),
            }
            Ok(())
        }
        DefenderAction::ModifyPersistent { old, new } => {
            if !new.same_context(old) {
                return Err(DecisionError::ContextViolation);
            }
            let pos = store
                .entries
                .iter()
                .position(|e| &e.intent == old)
                .ok_or(DecisionError::NotInStore)?;
            if let Some(existing) = store.entries.iter_mut().find(|e| &e.intent == new) {
                existing.ttl = store.default_ttl;
                store.entries.remove(pos);
            } else {
                store.entries[pos] = StoreEntry { intent: new.clone(), ttl: store.default_ttl };
            }
            Ok(())
        }
    }
}

/// Enumerates the legal defender actions: no-op always, insertion and
/// transient execution of every candidate, and every context-preserving
/// modification of a stored intent to a differing candidate.
pub fn legal_actions(
    candidates: &BTreeSet<SecurityIntent>,
    store: &IntentStore,
) -> Vec<DefenderAction> {
    let mut out = vec![DefenderAction::NoOp];
    for c in candidates {
        out.push(DefenderAction::ExecuteTransient(c.clone()));
        out.push(DefenderAction::InsertPersistent(c.clone()));
    }
    for entry in &store.entries {
        for c in candidates {
            if entry.intent.same_context(c) && &entry.intent != c {
                out.push(DefenderAction::ModifyPersistent {
                    old: entry.intent.clone(),
                    new: c.clone(),
                });
            }
        }
    }
    out.sort();
    out
}

/// Exact Bayes filter over the model's state space:
/// b'(s') ∝ z(o|s') · Σ_s t(s'|s,a) · b(s).
pub fn belief_update(
    belief: &BeliefState,
    action: &DefenderAction,
    observation: &str,
    model: &PomdpModel,
) -> Result<BeliefState, DecisionError> {
    let a = model.template_index(action)?;
    let o = model.observation_index(observation)?;
    belief_update_indexed(belief, a, o, model)
}

/// Bayes filter on raw indices; `belief_update` resolves labels to these.
pub fn belief_update_indexed(
    belief: &BeliefState,
    action_idx: usize,
    obs_idx: usize,
    model: &PomdpModel,
) -> Result<BeliefState, DecisionError> {
    let n = model.states.len();
    let mut next = vec![0.0; n];
    for (s_next, slot) in next.iter_mut().enumerate() {
        let mut predicted = 0.0;
        for (s, b) in belief.probabilities.iter().enumerate() {
            predicted += model.transition[action_idx][s][s_next] * b;
        }
        *slot = model.obs_fn[s_next][obs_idx] * predicted;
    }
    let normalizer: f64 = next.iter().sum();
    if normalizer < NORMALIZER_FLOOR {
        return Err(DecisionError::ImpossibleObservation(
            model.observations.get(obs_idx).cloned().unwrap_or_default(),
        ));
    }
    for p in &mut next {
        *p /= normalizer;
    }
    Ok(BeliefState { probabilities: next })
}

/// Expected immediate reward of an action under a belief: Σ_s b(s) · r(s, a).
///
/// The model must be validated; every action then resolves to a template.
pub fn expected_reward(belief: &BeliefState, action: &DefenderAction, model: &PomdpModel) -> f64 {
    let a =
        model.template_index(action).expect("validated model declares all base action templates");
    belief.probabilities.iter().enumerate().map(|(s, b)| b * model.reward[s][a]).sum()
}

/// Discounted return Σ_t γ^(t-1) · r_t of a reward sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for r in rewards {
        total += factor * r;
        factor *= gamma;
    }
    total
}

/// Myopic planner: the legal action with the highest expected immediate
/// reward. Ties break by the canonical action order, so uniform rewards
/// yield no-op.
pub fn greedy_plan(
    belief: &BeliefState,
    candidates: &BTreeSet<SecurityIntent>,
    store: &IntentStore,
    model: &PomdpModel,
) -> DefenderAction {
    let legal = legal_actions(candidates, store);
    let mut best: Option<(f64, DefenderAction)> = None;
    for action in legal {
        let value = expected_reward(belief, &action, model);
        match &best {
            Some((best_value, _)) if value <= *best_value => {}
            _ => best = Some((value, action)),
        }
    }
    best.map(|(_, a)| a).unwrap_or(DefenderAction::NoOp)
}

/// Reward structure: security-goal weights traded against per-action
/// operational cost, with a penalty when enforcement feedback reports a
/// misimplemented intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSpec {
    pub availability_weight: f64,
    pub confidentiality_weight: f64,
    pub integrity_weight: f64,
    pub insert_cost: f64,
    pub modify_cost: f64,
    pub noop_cost: f64,
    /// Transient execution costs this fraction of an insertion.
    pub transient_cost_multiplier: f64,
    /// Non-positive; added once per round when any intent is flagged.
    pub misimplementation_penalty: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            availability_weight: 1.0,
            confidentiality_weight: 1.0,
            integrity_weight: 1.0,
            insert_cost: 0.4,
            modify_cost: 0.4,
            noop_cost: 0.0,
            transient_cost_multiplier: 0.5,
            misimplementation_penalty: -1.0,
        }
    }
}

impl RewardSpec {
    pub fn action_cost(&self, action: &DefenderAction) -> f64 {
        match action {
            DefenderAction::NoOp => self.noop_cost,
            DefenderAction::ExecuteTransient(_) => {
                self.insert_cost * self.transient_cost_multiplier
            }
            DefenderAction::InsertPersistent(_) => self.insert_cost,
            DefenderAction::ModifyPersistent { .. } => self.modify_cost,
        }
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let weights =
            [self.availability_weight, self.confidentiality_weight, self.integrity_weight];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DecisionError::InvalidModel(
                "security-goal weights must be finite and non-negative".into(),
            ));
        }
        if self.misimplementation_penalty > 0.0 {
            return Err(DecisionError::InvalidModel(
                "misimplementation penalty must be non-positive".into(),
            ));
        }
        Ok(())
    }
}
