//! Planner strategies mapping (belief, candidates, store) to a defender
//! action. The greedy planner maximizes the model's expected immediate
//! reward; the scripted and random planners are baselines for evaluation
//! and for oracle-style tests.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::intent::SecurityIntent;

use super::{greedy_plan, legal_actions, BeliefState, DefenderAction, IntentStore, PomdpModel};

/// A strategy producing one legal action per decision point.
pub trait Planner {
    fn plan(
        &mut self,
        belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
        model: &PomdpModel,
    ) -> DefenderAction;

    fn name(&self) -> &'static str;
}

/// Maximizes expected immediate reward under the current belief.
#[derive(Debug, Clone, Default)]
pub struct GreedyMyopic;

impl Planner for GreedyMyopic {
    fn plan(
        &mut self,
        belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
        model: &PomdpModel,
    ) -> DefenderAction {
        greedy_plan(belief, candidates, store, model)
    }

    fn name(&self) -> &'static str {
        "greedy"
    }
}

/// Always takes no action.
#[derive(Debug, Clone, Default)]
pub struct NoOpPolicy;

impl Planner for NoOpPolicy {
    fn plan(
        &mut self,
        _belief: &BeliefState,
        _candidates: &BTreeSet<SecurityIntent>,
        _store: &IntentStore,
        _model: &PomdpModel,
    ) -> DefenderAction {
        DefenderAction::NoOp
    }

    fn name(&self) -> &'static str {
        "noop"
    }
}

/// Uniform choice over the legal actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn seeded(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Planner for RandomPolicy {
    fn plan(
        &mut self,
        _belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
        _model: &PomdpModel,
    ) -> DefenderAction {
        let legal = legal_actions(candidates, store);
        legal[self.rng.random_range(0..legal.len())].clone()
    }

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Scripted policy that inserts candidates whose defensive technique appears
/// in a priority list, highest priority first, skipping intents already
/// stored. Used as the mitigation oracle in end-to-end tests.
#[derive(Debug, Clone)]
pub struct OracleScripted {
    pub dt_priority: Vec<String>,
}

impl OracleScripted {
    pub fn new(dt_priority: Vec<String>) -> Self {
        OracleScripted { dt_priority }
    }
}

impl Planner for OracleScripted {
    fn plan(
        &mut self,
        _belief: &BeliefState,
        candidates: &BTreeSet<SecurityIntent>,
        store: &IntentStore,
        _model: &PomdpModel,
    ) -> DefenderAction {
        for dt in &self.dt_priority {
            if let Some(intent) = candidates.iter().find(|c| &c.dt == dt && !store.contains(c)) {
                return DefenderAction::InsertPersistent(intent.clone());
            }
        }
        DefenderAction::NoOp
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}
