//! The episode runner: one round is purge, attacker step, detect, belief
//! update, candidate derivation, act, enforce, assure, reward, TTL
//! decrement. Episodes are deterministic for a (scenario, planner, seed)
//! triple and serialize to versioned JSON-lines traces.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{
    apply_action, belief_update, discounted_return, legal_actions, BeliefState, DecisionError,
    DefenderAction, Environment, EpisodeSummary, IntentStore, Percept, Planner, PomdpModel,
    StepOutcome,
};
use crate::enforcement::{
    assure, enforce, feedback, translate_intent, AssuranceReport, EnforcementStatus,
    IntentStatusRecord, SfRegistry,
};
use crate::intent::{derive_candidates, ExclusionList, Observation, SecurityIntent};
use crate::ontology::DefensiveCategory;

use super::attacker::{attacker_step, AttackerRuntime};
use super::detector::{detector_emit, observation_label};
use super::infra::{InfraSummary, InfrastructureState};
use super::scenario::{Scenario, ScenarioError};

pub const TRACE_SCHEMA: &str = "acd-trace";
pub const TRACE_VERSION: u32 = 1;

/// Everything that happened in one round, as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Intents purged at the round start (TTL expired).
    pub purged: Vec<SecurityIntent>,
    pub observation: Observation,
    pub observation_label: String,
    pub candidates: Vec<SecurityIntent>,
    pub belief: Vec<f64>,
    pub action: DefenderAction,
    /// Enforcement outcome of the acted intent, when the action had one.
    pub act_status: Option<IntentStatusRecord>,
    pub assurance: AssuranceReport,
    pub feedback_flags: Vec<SecurityIntent>,
    pub reward: f64,
    /// End-of-round infrastructure digest.
    pub infra: InfraSummary,
    pub state_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub rounds: u32,
    pub mitigation_success: bool,
    pub time_to_mitigation: Option<u32>,
    pub total_return: f64,
    pub enforcement_failures: u32,
    pub drift_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema: String,
    pub version: u32,
    pub scenario: String,
    pub planner: String,
    pub seed: u64,
    pub gamma: f64,
    pub horizon: u32,
    pub rounds: Vec<RoundRecord>,
    pub metrics: EpisodeMetrics,
}

/// Computes episode metrics from round records. Mitigation succeeds when the
/// objective was never reached and no attack condition is active at the end;
/// time-to-mitigation is the number of rounds until the attack stayed clear
/// (0 when it was never active).
pub fn compute_metrics(records: &[RoundRecord], gamma: f64) -> EpisodeMetrics {
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let objective_ever = records.iter().any(|r| r.infra.objective_reached);
    let cleared_at_end = records.last().is_none_or(|r| !r.infra.attack_active);
    let mitigation_success = !objective_ever && cleared_at_end;
    let last_active = records.iter().rev().find(|r| r.infra.attack_active).map(|r| r.round);
    // Rounds until the attack stayed cleared: one past the last active
    // round, or 0 when it was never active.
    let time_to_mitigation =
        if mitigation_success { Some(last_active.map(|r| r + 1).unwrap_or(0)) } else { None };
    let enforcement_failures = records
        .iter()
        .map(|r| {
            let act = matches!(
                r.act_status,
                Some(IntentStatusRecord { status: EnforcementStatus::Failed { .. }, .. })
            ) as u32;
            let repairs = r
                .assurance
                .repairs
                .iter()
                .filter(|rep| matches!(rep.result, EnforcementStatus::Failed { .. }))
                .count() as u32;
            act + repairs
        })
        .sum();
    let drift_events = records
        .iter()
        .flat_map(|r| &r.assurance.statuses)
        .filter(|s| matches!(s.status, EnforcementStatus::Drifted { .. }))
        .count() as u32;
    EpisodeMetrics {
        rounds: records.len() as u32,
        mitigation_success,
        time_to_mitigation,
        total_return: discounted_return(&rewards, gamma),
        enforcement_failures,
        drift_events,
    }
}

struct PendingRound {
    round: u32,
    purged: Vec<SecurityIntent>,
    observation: Observation,
    observation_label: String,
    belief: Vec<f64>,
}

/// One episode's mutable world, driving the full round loop. Implements the
/// decision module's [`Environment`] so planners and the Q-learner can run
/// against it directly.
pub struct SimEnv {
    scenario: Scenario,
    registry: SfRegistry,
    exclusions: ExclusionList,

    infra: InfrastructureState,
    store: IntentStore,
    belief: BeliefState,
    rng: ChaCha8Rng,
    attacker_rt: AttackerRuntime,
    ever_enforced: BTreeSet<SecurityIntent>,
    last_action: DefenderAction,
    round: u32,
    done: bool,

    candidates: BTreeSet<SecurityIntent>,
    pending: Option<PendingRound>,
    records: Vec<RoundRecord>,
}

impl SimEnv {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let registry = scenario.build_registry()?;
        let exclusions = scenario.exclusion_list();
        let infra = scenario.infrastructure.clone();
        let attacker_rt = AttackerRuntime::new(&scenario.attacker);
        let belief = BeliefState::from_model(&scenario.pomdp);
        let store = IntentStore::new(scenario.default_ttl);
        Ok(SimEnv {
            scenario,
            registry,
            exclusions,
            infra,
            store,
            belief,
            rng: ChaCha8Rng::seed_from_u64(0),
            attacker_rt,
            ever_enforced: BTreeSet::new(),
            last_action: DefenderAction::NoOp,
            round: 0,
            done: true,
            candidates: BTreeSet::new(),
            pending: None,
            records: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn percept(&self) -> Percept {
        Percept {
            belief: self.belief.clone(),
            candidates: self.candidates.clone(),
            store: self.store.clone(),
        }
    }

    /// Round-start phases up to the decision point: purge, attacker step,
    /// detection, belief update, candidate derivation.
    fn begin_round(&mut self) {
        self.round += 1;
        let purged = self.store.purge_expired();
        attacker_step(
            &mut self.infra,
            &self.scenario.attacker,
            &mut self.attacker_rt,
            self.round,
            &mut self.rng,
        );
        let observation =
            detector_emit(&self.infra, &self.scenario.detector, self.round, &mut self.rng);
        let label = observation_label(&observation);
        self.belief = belief_update(&self.belief, &self.last_action, &label, &self.scenario.pomdp)
            .expect("scenario observation model must cover reachable observations");
        self.candidates = derive_candidates(
            &observation,
            &self.scenario.kb,
            &self.scenario.mapper_rules,
            &self.exclusions,
        )
        .expect("detector techniques are validated against the knowledge base");
        self.pending = Some(PendingRound {
            round: self.round,
            purged,
            observation,
            observation_label: label,
            belief: self.belief.probabilities.clone(),
        });
    }

    /// Completes the current round with the chosen action and, unless the
    /// episode ended, advances to the next decision point.
    pub fn advance(&mut self, action: &DefenderAction) -> Result<StepOutcome, DecisionError> {
        if self.done || self.pending.is_none() {
            return Err(DecisionError::IllegalAction);
        }
        if !legal_actions(&self.candidates, &self.store).contains(action) {
            return Err(DecisionError::IllegalAction);
        }
        apply_action(&mut self.store, action)?;

        let act_status = action.acted_intent().map(|intent| {
            let status = match translate_intent(intent, &self.registry) {
                Ok(plan) => enforce(
                    &plan,
                    &self.registry,
                    &self.scenario.failure_rules,
                    &mut self.infra,
                    &mut self.rng,
                ),
                Err(err) => EnforcementStatus::failed(&err.to_string()),
            };
            if status.is_enforced() {
                self.ever_enforced.insert(intent.clone());
            }
            IntentStatusRecord { intent: intent.clone(), status }
        });

        let report = assure(
            &self.store,
            &self.registry,
            &self.scenario.failure_rules,
            &mut self.infra,
            &mut self.ever_enforced,
            self.round,
            &mut self.rng,
        );

        // Transient executions are not in the store, so assurance does not
        // supersede their outcome; persistent outcomes come from the report.
        let mut flag_inputs: Vec<IntentStatusRecord> = Vec::new();
        if matches!(action, DefenderAction::ExecuteTransient(_)) {
            if let Some(status) = &act_status {
                flag_inputs.push(status.clone());
            }
        }
        flag_inputs.extend(report.statuses.iter().cloned());
        let flags = feedback(&flag_inputs, &report.repairs);

        let spec = &self.scenario.reward;
        let mut goal_total = 0.0;
        if !self.infra.c2_active() {
            goal_total += spec.confidentiality_weight;
        }
        if !self.infra.malicious_file_present()
            && !self.infra.malicious_process_present()
            && !self.infra.rearmable_persistence()
        {
            goal_total += spec.integrity_weight;
        }
        if !self.infra.objective_reached {
            goal_total += spec.availability_weight;
        }
        let mut reward = goal_total - spec.action_cost(action);
        if !flags.is_empty() {
            reward += spec.misimplementation_penalty;
        }

        self.store.decrement_ttls();

        let mitigated = !self.infra.attack_active();
        let exhausted = self.attacker_rt.exhausted(&self.scenario.attacker, &self.infra);
        let early_stop = mitigated && exhausted;
        if early_stop && self.round < self.scenario.horizon {
            // A mitigated episode ends early; the remaining rounds would pay
            // the full goal reward, so fold their discounted sum in here to
            // keep early mitigation worth as much as simulated idling.
            let all_goals =
                spec.availability_weight + spec.confidentiality_weight + spec.integrity_weight;
            let tail: f64 = (1..=(self.scenario.horizon - self.round))
                .map(|j| self.scenario.gamma.powi(j as i32))
                .sum();
            reward += tail * all_goals;
        }

        let pending = self.pending.take().expect("round in progress");
        self.records.push(RoundRecord {
            round: pending.round,
            purged: pending.purged,
            observation: pending.observation,
            observation_label: pending.observation_label,
            candidates: self.candidates.iter().cloned().collect(),
            belief: pending.belief,
            action: action.clone(),
            act_status,
            assurance: report,
            feedback_flags: flags.into_iter().collect(),
            reward,
            infra: self.infra.summary(),
            state_label: self.infra.state_label(),
        });

        self.last_action = action.clone();
        self.done = early_stop || self.round >= self.scenario.horizon;
        let percept = if self.done {
            None
        } else {
            self.begin_round();
            Some(self.percept())
        };
        Ok(StepOutcome { reward, percept, done: self.done })
    }
}

impl Environment for SimEnv {
    fn model(&self) -> &PomdpModel {
        &self.scenario.pomdp
    }

    fn discount(&self) -> f64 {
        self.scenario.gamma
    }

    fn defensive_categories(&self) -> BTreeMap<String, DefensiveCategory> {
        self.scenario.kb.defensive_properties.clone()
    }

    fn reset(&mut self, seed: u64) -> Percept {
        self.infra = self.scenario.infrastructure.clone();
        self.store = IntentStore::new(self.scenario.default_ttl);
        self.belief = BeliefState::from_model(&self.scenario.pomdp);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.attacker_rt = AttackerRuntime::new(&self.scenario.attacker);
        self.ever_enforced.clear();
        self.last_action = DefenderAction::NoOp;
        self.round = 0;
        self.done = false;
        self.candidates.clear();
        self.pending = None;
        self.records.clear();
        self.begin_round();
        self.percept()
    }

    fn step(&mut self, action: &DefenderAction) -> StepOutcome {
        self.advance(action).expect("planner actions must be legal for the current percept")
    }

    fn summary(&self) -> EpisodeSummary {
        let metrics = compute_metrics(&self.records, self.scenario.gamma);
        EpisodeSummary {
            rounds: self.round,
            mitigated: metrics.mitigation_success,
            time_to_mitigation: metrics.time_to_mitigation,
            enforcement_failures: metrics.enforcement_failures,
            drift_events: metrics.drift_events,
        }
    }
}

/// Runs one full episode and returns its trace.
pub fn run_episode(
    scenario: &Scenario,
    planner: &mut dyn Planner,
    seed: u64,
) -> Result<EpisodeTrace, ScenarioError> {
    let mut env = SimEnv::new(scenario.clone())?;
    let mut percept = env.reset(seed);
    loop {
        let action =
            planner.plan(&percept.belief, &percept.candidates, &percept.store, env.model());
        let outcome = env.advance(&action).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        match outcome.percept {
            Some(next) if !outcome.done => percept = next,
            _ => break,
        }
    }
    let metrics = compute_metrics(env.records(), scenario.gamma);
    Ok(EpisodeTrace {
        schema: TRACE_SCHEMA.to_string(),
        version: TRACE_VERSION,
        scenario: scenario.name.clone(),
        planner: planner.name().to_string(),
        seed,
        gamma: scenario.gamma,
        horizon: scenario.horizon,
        rounds: env.records().to_vec(),
        metrics,
    })
}

impl EpisodeTrace {
    /// JSON-lines serialization: a header line, one line per round, and a
    /// final metrics line. Identical inputs produce identical bytes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "record": "header",
            "schema": self.schema,
            "version": self.version,
            "scenario": self.scenario,
            "planner": self.planner,
            "seed": self.seed,
            "gamma": self.gamma,
            "horizon": self.horizon,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for round in &self.rounds {
            let mut value = serde_json::to_value(round).expect("round serializes");
            value
                .as_object_mut()
                .expect("round record is an object")
                .insert("record".to_string(), "round".into());
            out.push_str(&value.to_string());
            out.push('\n');
        }
        let mut metrics = serde_json::to_value(&self.metrics).expect("metrics serialize");
        metrics
            .as_object_mut()
            .expect("metrics record is an object")
            .insert("record".to_string(), "metrics".into());
        out.push_str(&metrics.to_string());
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeTrace, ScenarioError> {
        let mut header: Option<serde_json::Value> = None;
        let mut rounds = Vec::new();
        let mut metrics: Option<EpisodeMetrics> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)?;
            match value.get("record").and_then(|r| r.as_str()) {
                Some("header") => header = Some(value),
                Some("round") => rounds.push(serde_json::from_value::<RoundRecord>(value)?),
                Some("metrics") => metrics = Some(serde_json::from_value(value)?),
                other => {
                    return Err(ScenarioError::Invalid(format!(
                        "trace line {}: unknown record kind {other:?}",
                        i + 1
                    )))
                }
            }
        }
        let header = header.ok_or_else(|| ScenarioError::Invalid("trace has no header".into()))?;
        let get_str =
            |k: &str| header.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_string();
        let trace = EpisodeTrace {
            schema: get_str("schema"),
            version: header.get("version").and_then(|v| v.as_u64()).unwrap_or_default() as u32,
            scenario: get_str("scenario"),
            planner: get_str("planner"),
            seed: header.get("seed").and_then(|v| v.as_u64()).unwrap_or_default(),
            gamma: header.get("gamma").and_then(|v| v.as_f64()).unwrap_or_default(),
            horizon: header.get("horizon").and_then(|v| v.as_u64()).unwrap_or_default() as u32,
            rounds,
            metrics: metrics
                .ok_or_else(|| ScenarioError::Invalid("trace has no metrics".into()))?,
        };
        if trace.schema != TRACE_SCHEMA || trace.version != TRACE_VERSION {
            return Err(ScenarioError::Invalid(format!(
                "unsupported trace schema {}/{}",
                trace.schema, trace.version
            )));
        }
        Ok(trace)
    }
}
