//! Scenario files: one JSON document wiring a knowledge base, an initial
//! infrastructure, the attacker script, the detector, mapper rules, security
//! functions, the reward structure, and the defender's abstract model.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{PomdpModel, QHyperparams, RewardSpec};
use crate::enforcement::{required_effect_params, FailureRule, SecurityFunction, SfRegistry};
use crate::intent::{validate_rules, MapperRule};
use crate::ontology::{load_knowledge_base, KbError, KnowledgeBase};

use super::attacker::AttackerScript;
use super::detector::{all_observation_labels, DetectorEntry};
use super::infra::InfrastructureState;

/// Coverage checks on the abstract state/observation alphabets are only
/// enumerable for small scenarios; beyond these sizes loading fails.
const MAX_HOSTS: usize = 4;
const MAX_DETECTOR_TECHNIQUES: usize = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("unresolved reference: {0}")]
    Unresolved(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerDefaults {
    #[serde(default = "default_planner")]
    pub default: String,
    /// Defensive-technique priority for the scripted oracle planner.
    #[serde(default)]
    pub oracle_priority: Vec<String>,
    #[serde(default)]
    pub q: QHyperparams,
}

fn default_planner() -> String {
    "greedy".to_string()
}

impl Default for PlannerDefaults {
    fn default() -> Self {
        PlannerDefaults {
            default: default_planner(),
            oracle_priority: Vec::new(),
            q: QHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Path of the KB file, relative to the scenario file.
    #[serde(default)]
    pub kb_path: Option<String>,
    /// Resolved knowledge base; populated by the loader.
    #[serde(skip)]
    pub kb: KnowledgeBase,
    pub default_ttl: u32,
    pub gamma: f64,
    pub horizon: u32,
    /// Metadata keys excluded from technical metadata; the standard list
    /// applies when omitted.
    #[serde(default)]
    pub exclusions: Option<Vec<String>>,
    pub infrastructure: InfrastructureState,
    pub attacker: AttackerScript,
    pub detector: Vec<DetectorEntry>,
    pub mapper_rules: Vec<MapperRule>,
    pub security_functions: Vec<SecurityFunction>,
    #[serde(default)]
    pub failure_rules: Vec<FailureRule>,
    #[serde(default)]
    pub reward: RewardSpec,
    pub pomdp: PomdpModel,
    #[serde(default)]
    pub planner: PlannerDefaults,
}

impl Scenario {
    /// Parses a scenario document; `kb_text` supplies the KB when the
    /// document names no `kb_path` (in-memory use and tests).
    pub fn from_parts(json: &str, kb_text: &str) -> Result<Scenario, ScenarioError> {
        let mut scenario: Scenario = serde_json::from_str(json)?;
        scenario.kb = load_knowledge_base(kb_text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn exclusion_list(&self) -> crate::intent::ExclusionList {
        match &self.exclusions {
            Some(keys) => crate::intent::ExclusionList { keys: keys.iter().cloned().collect() },
            None => crate::intent::ExclusionList::default(),
        }
    }

    /// Builds the SF registry from the scenario's declarations.
    pub fn build_registry(&self) -> Result<SfRegistry, ScenarioError> {
        let mut registry = SfRegistry::new();
        for sf in &self.security_functions {
            registry.register(sf.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        Ok(registry)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon < 1 {
            return Err(ScenarioError::Invalid("horizon must be at least 1".into()));
        }
        if self.default_ttl < 1 {
            return Err(ScenarioError::Invalid("default_ttl must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ScenarioError::Invalid("gamma must be in [0, 1]".into()));
        }
        self.reward.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.planner.q.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let violations = self.kb.validate();
        if let Some(v) = violations.first() {
            return Err(ScenarioError::Invalid(format!("knowledge base: {v}")));
        }

        validate_rules(&self.mapper_rules, &self.kb)
            .map_err(|e| ScenarioError::Unresolved(e.to_string()))?;

        self.validate_infrastructure()?;
        self.validate_attacker()?;
        self.validate_detector()?;
        self.validate_security_functions()?;
        self.validate_model()?;
        Ok(())
    }

    fn host_exists(&self, name: &str) -> bool {
        self.infrastructure.host(name).is_some()
    }

    fn validate_infrastructure(&self) -> Result<(), ScenarioError> {
        let infra = &self.infrastructure;
        if infra.hosts.is_empty() {
            return Err(ScenarioError::Invalid("at least one host is required".into()));
        }
        if infra.hosts.len() > MAX_HOSTS {
            return Err(ScenarioError::Invalid(format!(
                "at most {MAX_HOSTS} hosts are supported by the state labeling"
            )));
        }
        let mut host_names = BTreeSet::new();
        for host in &infra.hosts {
            if !host_names.insert(&host.name) {
                return Err(ScenarioError::Invalid(format!("duplicate host `{}`", host.name)));
            }
        }
        for f in &infra.files {
            if !self.host_exists(&f.host) {
                return Err(ScenarioError::Unresolved(format!("file host `{}`", f.host)));
            }
        }
        for p in &infra.processes {
            if !self.host_exists(&p.host) {
                return Err(ScenarioError::Unresolved(format!("process host `{}`", p.host)));
            }
        }
        let mut job_ids = BTreeSet::new();
        for j in &infra.scheduled_jobs {
            if !self.host_exists(&j.host) {
                return Err(ScenarioError::Unresolved(format!("job host `{}`", j.host)));
            }
            if !job_ids.insert(&j.id) {
                return Err(ScenarioError::Invalid(format!("duplicate job `{}`", j.id)));
            }
        }
        for c in &infra.connections {
            if !self.host_exists(&c.src_host) {
                return Err(ScenarioError::Unresolved(format!("connection host `{}`", c.src_host)));
            }
        }
        Ok(())
    }

    fn validate_attacker(&self) -> Result<(), ScenarioError> {
        let attacker = &self.attacker;
        if !(0.0..=1.0).contains(&attacker.counter_drift_prob) {
            return Err(ScenarioError::Invalid("counter_drift_prob must be in [0, 1]".into()));
        }
        if let Some(c2) = &attacker.c2 {
            if !self.host_exists(&c2.host) {
                return Err(ScenarioError::Unresolved(format!("c2 host `{}`", c2.host)));
            }
            if self.infrastructure.dns_binding(&c2.domain).is_none() {
                return Err(ScenarioError::Unresolved(format!(
                    "c2 domain `{}` has no DNS binding",
                    c2.domain
                )));
            }
        }
        for phase in &attacker.phases {
            if !(0.0..=1.0).contains(&phase.success_prob) {
                return Err(ScenarioError::Invalid(format!(
                    "phase `{}` success probability out of range",
                    phase.name
                )));
            }
        }
        Ok(())
    }

    fn validate_detector(&self) -> Result<(), ScenarioError> {
        let techniques: BTreeSet<&str> =
            self.detector.iter().map(|e| e.technique_id.as_str()).collect();
        if techniques.len() > MAX_DETECTOR_TECHNIQUES {
            return Err(ScenarioError::Invalid(format!(
                "at most {MAX_DETECTOR_TECHNIQUES} distinct detector techniques are supported"
            )));
        }
        for entry in &self.detector {
            if !self.kb.offensive_techniques.contains_key(&entry.technique_id) {
                return Err(ScenarioError::Unresolved(format!(
                    "detector technique `{}`",
                    entry.technique_id
                )));
            }
            for p in [entry.true_positive, entry.false_positive] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(ScenarioError::Invalid(format!(
                        "detector probabilities for `{}` out of range",
                        entry.technique_id
                    )));
                }
            }
            let allowed = entry.condition.placeholders();
            for value in entry.metadata.values() {
                for token in placeholder_tokens(value) {
                    if !allowed.contains(&token.as_str()) {
                        return Err(ScenarioError::Invalid(format!(
                            "metadata placeholder `{{{token}}}` is not provided by the `{:?}` condition",
                            entry.condition
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_security_functions(&self) -> Result<(), ScenarioError> {
        let registry = self.build_registry()?;
        for sf in registry.functions() {
            for cap in &sf.capabilities {
                if !self.kb.defensive_techniques.contains_key(&cap.technique_id) {
                    return Err(ScenarioError::Unresolved(format!(
                        "capability technique `{}` of `{}`",
                        cap.technique_id, sf.id
                    )));
                }
                match required_effect_params(&cap.technique_id) {
                    Some(required) => {
                        for param in required {
                            if !cap.params.iter().any(|p| p == param) {
                                return Err(ScenarioError::Invalid(format!(
                                    "capability `{}` of `{}` must declare parameter `{param}`",
                                    cap.technique_id, sf.id
                                )));
                            }
                        }
                    }
                    None => {
                        return Err(ScenarioError::Invalid(format!(
                            "no enforcement effect is defined for `{}`",
                            cap.technique_id
                        )))
                    }
                }
            }
        }
        for rule in &self.failure_rules {
            if registry.get(&rule.sf_id).is_none() {
                return Err(ScenarioError::Unresolved(format!(
                    "failure rule references `{}`",
                    rule.sf_id
                )));
            }
        }
        for dt in &self.planner.oracle_priority {
            if !self.kb.defensive_techniques.contains_key(dt) {
                return Err(ScenarioError::Unresolved(format!("oracle priority technique `{dt}`")));
            }
        }
        Ok(())
    }

    fn validate_model(&self) -> Result<(), ScenarioError> {
        self.pomdp.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for label in InfrastructureState::all_state_labels(self.infrastructure.hosts.len()) {
            if !self.pomdp.states.contains(&label) {
                return Err(ScenarioError::Invalid(format!(
                    "abstract model is missing state label `{label}`"
                )));
            }
        }
        for label in all_observation_labels(&self.detector) {
            if !self.pomdp.observations.contains(&label) {
                return Err(ScenarioError::Invalid(format!(
                    "abstract model is missing observation label `{label}`"
                )));
            }
        }
        if (self.pomdp.discount - self.gamma).abs() > 1e-9 {
            return Err(ScenarioError::Invalid(
                "model discount must match the scenario gamma".into(),
            ));
        }
        Ok(())
    }
}

fn placeholder_tokens(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start + 1..].find('}') else { break };
        out.push(rest[start + 1..start + 1 + len].to_string());
        rest = &rest[start + 1 + len + 1..];
    }
    out
}

/// Loads a scenario file, resolving its KB path relative to the file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    let mut scenario: Scenario = serde_json::from_str(&text)?;
    let kb_path = scenario
        .kb_path
        .clone()
        .ok_or_else(|| ScenarioError::Invalid("scenario names no kb_path".into()))?;
    let kb_file = path.parent().unwrap_or_else(|| Path::new(".")).join(kb_path);
    let kb_text = std::fs::read_to_string(&kb_file)
        .map_err(|source| ScenarioError::Io { path: kb_file.display().to_string(), source })?;
    scenario.kb = load_knowledge_base(&kb_text)?;
    scenario.validate()?;
    Ok(scenario)
}
