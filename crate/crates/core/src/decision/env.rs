//! Environment interface the planners and the Q-learner train against.
//!
//! An environment owns one episode's mutable world: it advances the attack,
//! emits observations, derives the candidate intent set (the intent
//! observation function), maintains the belief and the intent store, and
//! scores rewards. The defender only sees [`Percept`]s.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::intent::SecurityIntent;
use crate::ontology::DefensiveCategory;

use super::{BeliefState, DefenderAction, IntentStore, PomdpModel};

/// What the defender perceives at its decision point in a round: the updated
/// belief, the candidate intents derived from this round's observation, and
/// the current intent store.
#[derive(Debug, Clone)]
pub struct Percept {
    pub belief: BeliefState,
    pub candidates: BTreeSet<SecurityIntent>,
    pub store: IntentStore,
}

/// Result of acting: the round's reward, and the next decision point unless
/// the episode ended.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub percept: Option<Percept>,
    pub done: bool,
}

/// End-of-episode facts the evaluation metrics are computed from; the
/// mitigation semantics are defined by the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub rounds: u32,
    pub mitigated: bool,
    pub time_to_mitigation: Option<u32>,
    pub enforcement_failures: u32,
    pub drift_events: u32,
}

/// A resettable, seeded episode environment.
///
/// Contract: `reset` starts a fresh episode and runs it up to the first
/// decision point; `step` applies a legal action and advances to the next
/// decision point. Implementations must be deterministic for a given seed.
/// `step` panics if the action is not in the legal set for the current
/// percept.
pub trait Environment {
    /// The defender's tabular abstraction used for belief tracking.
    fn model(&self) -> &PomdpModel;

    /// Discount factor for episode returns.
    fn discount(&self) -> f64;

    /// Defensive property -> category, for store summaries.
    fn defensive_categories(&self) -> BTreeMap<String, DefensiveCategory>;

    fn reset(&mut self, seed: u64) -> Percept;

    fn step(&mut self, action: &DefenderAction) -> StepOutcome;

    /// Facts about the finished (or in-flight) episode.
    fn summary(&self) -> EpisodeSummary;
}
