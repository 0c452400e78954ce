//! Tabular Q-learning over a discretized belief and an intent-store summary.
//!
//! The learner's state key combines per-dimension belief buckets with the
//! count of stored intents per defensive category (capped); its action key is
//! the refined action template. The table stays small by construction and is
//! validated against a hard entry cap during training.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::intent::SecurityIntent;
use crate::ontology::DefensiveCategory;

use super::env::Environment;
use super::planner::Planner;
use super::{
    discounted_return, legal_actions, BeliefState, DecisionError, DefenderAction, IntentStore,
    PomdpModel,
};

/// Hard upper bound on Q-table entries; discretization must stay under it.
pub const MAX_TABLE_ENTRIES: usize = 100_000;

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QHyperparams {
    /// Learning rate, in (0, 1].
    pub alpha: f64,
    /// Discount used in the TD target.
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per-episode multiplicative decay of epsilon, in (0, 1].
    pub epsilon_decay: f64,
    /// Buckets per belief dimension; at least 1.
    pub belief_buckets: usize,
    /// Cap on each per-category store count in the state key.
    pub store_category_cap: u32,
    pub seed: u64,
}

impl Default for QHyperparams {
    fn default() -> Self {
        QHyperparams {
            alpha: 0.2,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.999,
            belief_buckets: 5,
            store_category_cap: 3,
            seed: 0,
        }
    }
}

impl QHyperparams {
    pub fn validate(&self) -> Result<(), DecisionError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DecisionError::InvalidHyperparams("alpha must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DecisionError::InvalidHyperparams("gamma must be in [0, 1]".into()));
        }
        if self.belief_buckets == 0 {
            return Err(DecisionError::InvalidHyperparams("belief grid must be non-empty".into()));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(DecisionError::InvalidHyperparams(
                "epsilon decay must be in (0, 1]".into(),
            ));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(DecisionError::InvalidHyperparams("epsilon must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// A learned tabular policy. Unvisited entries read as 0, so a fresh policy
/// falls back to the canonical action order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    pub version: u32,
    pub belief_buckets: usize,
    pub store_category_cap: u32,
    /// Defensive property -> category, used for the store summary.
    pub defensive_categories: BTreeMap<String, DefensiveCategory>,
    /// state key -> action template -> value.
    pub q: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TabularQ {
    pub fn new(
        hp: &QHyperparams,
        defensive_categories: BTreeMap<String, DefensiveCategory>,
    ) -> Self {
        TabularQ {
            version: POLICY_FORMAT_VERSION,
            belief_buckets: hp.belief_buckets,
            store_category_cap: hp.store_category_cap,
            defensive_categories,
            q: BTreeMap::new(),
        }
    }

    /// Discretized state key: belief bucket per dimension plus capped intent
    /// counts per defensive category (plus a bucket for unknown properties).
    pub fn state_key(&self, belief: &BeliefState, store: &IntentStore) -> String {
        let buckets: Vec<String> = belief
            .probabilities
            .iter()
            .map(|p| {
                let b = (p * self.belief_buckets as f64) as usize;
                b.min(self.belief_buckets - 1).to_string()
            })
            .collect();
        let mut counts = [0u32; 4]; // Evict, Isolate, Restore, unknown
        for intent in store.intents() {
            let slot = match self.defensive_categories.get(&intent.def_property) {
                Some(DefensiveCategory::Evict) => 0,
                Some(DefensiveCategory::Isolate) => 1,
                Some(DefensiveCategory::Restore) => 2,
                None => 3,
            };
            counts[slot] = (counts[slot] + 1).min(self.store_category_cap);
        }
        let counts: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        format!("b:{}|s:{}", buckets.join(","), counts.join(","))
    }

    pub fn value(&self, state_key: &str, template: &str) -> f64 {
        self.q.get(state_key).and_then(|row| row.get(template)).copied().unwrap_or(0.0)
    }

    fn update(&mut self, state_key: &str, template: &str, value: f64) {
        self.q.entry(state_key.to_string()).or_default().insert(template.to_string(), value);
    }

    /// Greedy action under the learned values; canonical order breaks ties.
    pub fn best_action(
        &self,
        belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
    ) -> DefenderAction {
        let key = self.state_key(belief, store);
        let legal = legal_actions(candidates, store);
        let mut best: Option<(f64, DefenderAction)> = None;
        for action in legal {
            let value = self.value(&key, &action.refined_template());
            match &best {
                Some((bv, _)) if value <= *bv => {}
                _ => best = Some((value, action)),
            }
        }
        best.map(|(_, a)| a).unwrap_or(DefenderAction::NoOp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DecisionError> {
        let policy: TabularQ = serde_json::from_str(text)
            .map_err(|e| DecisionError::InvalidHyperparams(format!("bad policy file: {e}")))?;
        if policy.version != POLICY_FORMAT_VERSION {
            return Err(DecisionError::InvalidHyperparams(format!(
                "unsupported policy version {}",
                policy.version
            )));
        }
        Ok(policy)
    }
}

impl Planner for TabularQ {
    fn plan(
        &mut self,
        belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
        _model: &PomdpModel,
    ) -> DefenderAction {
        self.best_action(belief, candidates, store)
    }

    fn name(&self) -> &'static str {
        "tabular-q"
    }
}

/// Trains a tabular Q policy with epsilon-greedy exploration. Reproducible
/// for a given seed; episode e runs on seed `hp.seed + e`.
pub fn q_learning_train(
    env: &mut dyn Environment,
    episodes: u32,
    hp: &QHyperparams,
) -> Result<TabularQ, DecisionError> {
    hp.validate()?;
    let mut policy = TabularQ::new(hp, env.defensive_categories());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut epsilon = hp.epsilon_start;

    for episode in 0..episodes {
        let mut percept = env.reset(hp.seed.wrapping_add(episode as u64));
        loop {
            let state_key = policy.state_key(&percept.belief, &percept.store);
            let legal = legal_actions(&percept.candidates, &percept.store);
            let action = if rng.random::<f64>() < epsilon {
                legal[rng.random_range(0..legal.len())].clone()
            } else {
                policy.best_action(&percept.belief, &percept.candidates, &percept.store)
            };
            let template = action.refined_template();
            let outcome = env.step(&action);

            let future = match &outcome.percept {
                Some(next) if !outcome.done => {
                    let next_key = policy.state_key(&next.belief, &next.store);
                    legal_actions(&next.candidates, &next.store)
                        .iter()
                        .map(|a| policy.value(&next_key, &a.refined_template()))
                        .fold(f64::NEG_INFINITY, f64::max)
                }
                _ => 0.0,
            };
            let old = policy.value(&state_key, &template);
            let target = outcome.reward + hp.gamma * future;
            let updated = old + hp.alpha * (target - old);
            debug_assert!(updated.is_finite());
            policy.update(&state_key, &template, updated);

            match outcome.percept {
                Some(next) if !outcome.done => percept = next,
                _ => break,
            }
        }
        let entries: usize = policy.q.values().map(|row| row.len()).sum();
        if entries > MAX_TABLE_ENTRIES {
            return Err(DecisionError::InvalidHyperparams(format!(
                "Q-table exceeded {MAX_TABLE_ENTRIES} entries; coarsen the discretization"
            )));
        }
        epsilon = (epsilon * hp.epsilon_decay).max(hp.epsilon_end);
    }
    Ok(policy)
}

/// Aggregate evaluation results; `returns` keeps the per-episode discounted
/// returns for downstream significance tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: u32,
    pub mean_return: f64,
    pub mitigation_rate: f64,
    pub mean_time_to_mitigation: Option<f64>,
    pub returns: Vec<f64>,
}

/// Runs `n_episodes` episodes of `planner` against `env`. Episode i uses
/// seed `seed + i`, so two evaluations with the same inputs are identical.
pub fn evaluate_policy(
    planner: &mut dyn Planner,
    env: &mut dyn Environment,
    n_episodes: u32,
    seed: u64,
) -> EvalMetrics {
    assert!(n_episodes >= 1, "evaluation needs at least one episode");
    let mut returns = Vec::with_capacity(n_episodes as usize);
    let mut mitigated = 0u32;
    let mut mitigation_times = Vec::new();

    for episode in 0..n_episodes {
        let mut percept = env.reset(seed.wrapping_add(episode as u64));
        let mut rewards = Vec::new();
        loop {
            let action =
                planner.plan(&percept.belief, &percept.candidates, &percept.store, env.model());
            let outcome = env.step(&action);
            rewards.push(outcome.reward);
            match outcome.percept {
                Some(next) if !outcome.done => percept = next,
                _ => break,
            }
        }
        returns.push(discounted_return(&rewards, env.discount()));
        let summary = env.summary();
        if summary.mitigated {
            mitigated += 1;
            if let Some(t) = summary.time_to_mitigation {
                mitigation_times.push(t as f64);
            }
        }
    }

    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    let mean_time_to_mitigation = if mitigation_times.is_empty() {
        None
    } else {
        Some(mitigation_times.iter().sum::<f64>() / mitigation_times.len() as f64)
    };
    EvalMetrics {
        episodes: n_episodes,
        mean_return,
        mitigation_rate: mitigated as f64 / n_episodes as f64,
        mean_time_to_mitigation,
        returns,
    }
}

/// Percentile bootstrap confidence interval for the mean of `samples`.
pub fn bootstrap_mean_ci(
    samples: &[f64],
    iterations: u32,
    confidence: f64,
    seed: u64,
) -> (f64, f64) {
    assert!(!samples.is_empty());
    assert!(confidence > 0.0 && confidence < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let mut sum = 0.0;
        for _ in 0..samples.len() {
            sum += samples[rng.random_range(0..samples.len())];
        }
        means.push(sum / samples.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - confidence) / 2.0;
    let lo = ((means.len() as f64 - 1.0) * alpha).round() as usize;
    let hi = ((means.len() as f64 - 1.0) * (1.0 - alpha)).round() as usize;
    (means[lo], means[hi])
}
