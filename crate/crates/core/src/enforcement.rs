//! The intent enforcement agent: a registry of security functions with
//! advertised capabilities, translation of intents into concrete
//! enforcement plans, execution of those plans against the simulated
//! infrastructure, and the inner-loop assurance that detects and repairs
//! intent drift.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::IntentStore;
use crate::intent::SecurityIntent;
use crate::simulation::infra::InfrastructureState;

/// Network-level or endpoint-level enforcement point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SfKind {
    Nsf,
    Esf,
}

/// A defensive technique an SF can realize, with the operational parameters
/// its execution requires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub technique_id: String,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityFunction {
    pub id: String,
    pub kind: SfKind,
    pub capabilities: Vec<Capability>,
    /// Success probability per execution, in [0, 1].
    pub reliability: f64,
    /// Per-use operational cost; translation prefers cheaper functions.
    pub cost: f64,
}

/// Conditional failure overrides layered on top of SF reliability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRule {
    pub sf_id: String,
    pub condition: FailureCondition,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCondition {
    /// The plan's target file is attacker-owned and the attacker holds
    /// filesystem privileges on its host.
    AttackerOwnedFilePrivileged,
    /// The attacker holds filesystem privileges on the plan's target host.
    HostPrivileged,
    /// Unconditional; fault injection for tests.
    Always,
}

#[derive(Debug, Error)]
pub enum EnforcementError {
    #[error("security function `{0}` is already registered")]
    DuplicateSf(String),
    #[error("security function reliability must be in [0, 1]")]
    BadReliability,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslateError {
    #[error("no security function advertises `{0}`")]
    NoCapableSf(String),
    #[error("security function `{sf}` requires parameter `{param}` which cannot be bound")]
    MissingParameter { sf: String, param: String },
}

/// Registry of security functions indexed by id and by capability.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SfRegistry {
    functions: BTreeMap<String, SecurityFunction>,
    by_capability: BTreeMap<String, Vec<String>>,
}

impl SfRegistry {
    pub fn new() -> Self {
        SfRegistry::default()
    }

    pub fn register(&mut self, sf: SecurityFunction) -> Result<(), EnforcementError> {
        if self.functions.contains_key(&sf.id) {
            return Err(EnforcementError::DuplicateSf(sf.id));
        }
        if !(0.0..=1.0).contains(&sf.reliability) {
            return Err(EnforcementError::BadReliability);
        }
        for cap in &sf.capabilities {
            let ids = self.by_capability.entry(cap.technique_id.clone()).or_default();
            ids.push(sf.id.clone());
            ids.sort();
        }
        self.functions.insert(sf.id.clone(), sf);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&SecurityFunction> {
        self.functions.get(id)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> impl Iterator<Item = &SecurityFunction> {
        self.functions.values()
    }

    /// SFs advertising the technique, in id order.
    pub fn capable(&self, technique_id: &str) -> Vec<&SecurityFunction> {
        self.by_capability
            .get(technique_id)
            .map(|ids| ids.iter().filter_map(|id| self.functions.get(id)).collect())
            .unwrap_or_default()
    }
}

/// A translated intent: the selected SF and the fully bound parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcementPlan {
    pub intent: SecurityIntent,
    pub sf_id: String,
    pub parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnforcementStatus {
    Enforced,
    Failed {
        reason: String,
    },
    /// A previously enforced intent whose effect no longer holds.
    Drifted {
        detected_round: u32,
    },
}

impl EnforcementStatus {
    pub fn failed(reason: &str) -> Self {
        EnforcementStatus::Failed { reason: reason.to_string() }
    }

    pub fn is_enforced(&self) -> bool {
        matches!(self, EnforcementStatus::Enforced)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentStatusRecord {
    pub intent: SecurityIntent,
    pub status: EnforcementStatus,
}

/// A re-enforcement attempted during assurance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub intent: SecurityIntent,
    /// True when the intent had drifted (was enforced before); false for a
    /// retry of an intent that never took effect.
    pub drift: bool,
    pub result: EnforcementStatus,
}

/// Outcome of one assurance pass over the persistent intent store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssuranceReport {
    pub round: u32,
    pub statuses: Vec<IntentStatusRecord>,
    pub repairs: Vec<RepairRecord>,
}

/// Translates an intent into an enforcement plan: the lowest-cost SF
/// advertising the intent's defensive technique whose required parameters
/// can all be bound from the target's attributes or the alert metadata.
/// Ties break by SF id.
pub fn translate_intent(
    intent: &SecurityIntent,
    registry: &SfRegistry,
) -> Result<EnforcementPlan, TranslateError> {
    let mut capable = registry.capable(&intent.dt);
    if capable.is_empty() {
        return Err(TranslateError::NoCapableSf(intent.dt.clone()));
    }
    capable.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut first_missing: Option<TranslateError> = None;
    for sf in capable {
        let cap = sf
            .capabilities
            .iter()
            .find(|c| c.technique_id == intent.dt)
            .expect("capability index is consistent");
        let mut parameters = BTreeMap::new();
        let mut missing = None;
        for param in &cap.params {
            let value = intent
                .target
                .attributes
                .get(param)
                .map(String::as_str)
                .or_else(|| intent.md.get(param));
            match value {
                Some(v) if !v.is_empty() => {
                    parameters.insert(param.clone(), v.to_string());
                }
                _ => {
                    missing = Some(param.clone());
                    break;
                }
            }
        }
        match missing {
            None => {
                return Ok(EnforcementPlan {
                    intent: intent.clone(),
                    sf_id: sf.id.clone(),
                    parameters,
                })
            }
            Some(param) => {
                first_missing
                    .get_or_insert(TranslateError::MissingParameter { sf: sf.id.clone(), param });
            }
        }
    }
    Err(first_missing.expect("at least one capable SF was examined"))
}

/// Parameters each technique's effect consumes; scenario validation checks
/// SF capability declarations against this table.
pub fn required_effect_params(technique_id: &str) -> Option<&'static [&'static str]> {
    match technique_id {
        "d3f:NetworkTrafficFiltering" => Some(&["dest_host"]),
        "d3f:DNSDenylisting" => Some(&["domain"]),
        "d3f:FileEviction" => Some(&["host", "path"]),
        "d3f:ProcessTermination" => Some(&["host", "pid"]),
        "d3f:SystemCallFiltering" => Some(&["host", "image"]),
        "d3f:HostReboot" => Some(&["host"]),
        "d3f:AccountDisabling" => Some(&["host", "account"]),
        _ => None,
    }
}

/// True when the plan's intended effect currently holds in the
/// infrastructure; this is the assurance check.
pub fn effect_holds(plan: &EnforcementPlan, infra: &InfrastructureState) -> bool {
    let p = |name: &str| plan.parameters.get(name).map(String::as_str).unwrap_or("");
    match plan.intent.dt.as_str() {
        "d3f:NetworkTrafficFiltering" => infra.has_block_rule(p("dest_host")),
        "d3f:DNSDenylisting" => infra.is_denied(p("domain")),
        "d3f:FileEviction" => !infra.file_present(p("host"), p("path")),
        "d3f:ProcessTermination" => infra.process(p("host"), p("pid")).is_none(),
        "d3f:SystemCallFiltering" => infra.has_syscall_filter(p("host"), p("image")),
        "d3f:HostReboot" => {
            !infra.processes.iter().any(|proc| proc.host == p("host") && proc.malicious)
        }
        "d3f:AccountDisabling" => infra.is_account_disabled(p("host"), p("account")),
        _ => false,
    }
}

fn apply_effect(plan: &EnforcementPlan, infra: &mut InfrastructureState) -> Result<(), String> {
    let p = |name: &str| -> Result<&str, String> {
        plan.parameters
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| format!("missing effect parameter `{name}`"))
    };
    match plan.intent.dt.as_str() {
        "d3f:NetworkTrafficFiltering" => infra.add_block_rule(p("dest_host")?),
        "d3f:DNSDenylisting" => infra.add_dns_deny(p("domain")?),
        "d3f:FileEviction" => {
            infra.evict_file(p("host")?, p("path")?);
        }
        "d3f:ProcessTermination" => infra.kill_process(p("host")?, p("pid")?),
        "d3f:SystemCallFiltering" => infra.add_syscall_filter(p("host")?, p("image")?),
        "d3f:HostReboot" => infra.reboot_host(p("host")?),
        "d3f:AccountDisabling" => infra.disable_account(p("host")?, p("account")?),
        other => return Err(format!("no effect mapping for `{other}`")),
    }
    Ok(())
}

fn failure_override<'a>(
    plan: &EnforcementPlan,
    rules: &'a [FailureRule],
    infra: &InfrastructureState,
) -> Option<&'a str> {
    let host = plan.parameters.get("host").map(String::as_str);
    let path = plan.parameters.get("path").map(String::as_str);
    for rule in rules.iter().filter(|r| r.sf_id == plan.sf_id) {
        let triggered = match rule.condition {
            FailureCondition::Always => true,
            FailureCondition::HostPrivileged => {
                host.and_then(|h| infra.host(h)).is_some_and(|h| h.attacker_privileged)
            }
            FailureCondition::AttackerOwnedFilePrivileged => match (host, path) {
                (Some(h), Some(pa)) => {
                    infra.host(h).is_some_and(|hh| hh.attacker_privileged)
                        && infra.file(h, pa).is_some_and(|f| f.owner == "attacker")
                }
                _ => false,
            },
        };
        if triggered {
            return Some(&rule.reason);
        }
    }
    None
}

/// Executes an enforcement plan. Already-satisfied plans report `Enforced`
/// without touching the infrastructure or the RNG. Otherwise conditional
/// failure rules are consulted first, then one reliability roll decides; the
/// effect mutates the infrastructure only on success.
pub fn enforce<R: Rng>(
    plan: &EnforcementPlan,
    registry: &SfRegistry,
    failure_rules: &[FailureRule],
    infra: &mut InfrastructureState,
    rng: &mut R,
) -> EnforcementStatus {
    let Some(sf) = registry.get(&plan.sf_id) else {
        return EnforcementStatus::failed("unknown security function");
    };
    if effect_holds(plan, infra) {
        return EnforcementStatus::Enforced;
    }
    if let Some(reason) = failure_override(plan, failure_rules, infra) {
        return EnforcementStatus::failed(reason);
    }
    if sf.reliability < 1.0 && rng.random::<f64>() >= sf.reliability {
        return EnforcementStatus::failed("unreliable");
    }
    match apply_effect(plan, infra) {
        Ok(()) => EnforcementStatus::Enforced,
        Err(reason) => EnforcementStatus::Failed { reason },
    }
}

/// One assurance pass: verifies every persistent intent's effect, repairs
/// drift in place, and retries intents that never took effect.
/// `ever_enforced` is the cross-round memory distinguishing drift from a
/// plain failure; successful (re-)enforcement updates it.
pub fn assure<R: Rng>(
    store: &IntentStore,
    registry: &SfRegistry,
    failure_rules: &[FailureRule],
    infra: &mut InfrastructureState,
    ever_enforced: &mut BTreeSet<SecurityIntent>,
    round: u32,
    rng: &mut R,
) -> AssuranceReport {
    let mut statuses = Vec::new();
    let mut repairs = Vec::new();
    for intent in store.intents() {
        let plan = match translate_intent(intent, registry) {
            Ok(plan) => plan,
            Err(err) => {
                statuses.push(IntentStatusRecord {
                    intent: intent.clone(),
                    status: EnforcementStatus::failed(&err.to_string()),
                });
                continue;
            }
        };
        if effect_holds(&plan, infra) {
            ever_enforced.insert(intent.clone());
            statuses.push(IntentStatusRecord {
                intent: intent.clone(),
                status: EnforcementStatus::Enforced,
            });
            continue;
        }
        let drift = ever_enforced.contains(intent);
        let result = enforce(&plan, registry, failure_rules, infra, rng);
        if result.is_enforced() {
            ever_enforced.insert(intent.clone());
        }
        let status = if drift {
            EnforcementStatus::Drifted { detected_round: round }
        } else {
            result.clone()
        };
        statuses.push(IntentStatusRecord { intent: intent.clone(), status });
        repairs.push(RepairRecord { intent: intent.clone(), drift, result });
    }
    AssuranceReport { round, statuses, repairs }
}

/// Misimplementation flags for the reward function: every intent whose
/// end-of-round status is a failure, or whose drift repair failed. Drift
/// that was repaired in the same pass is not flagged.
pub fn feedback(
    statuses: &[IntentStatusRecord],
    repairs: &[RepairRecord],
) -> BTreeSet<SecurityIntent> {
    let mut flags = BTreeSet::new();
    for record in statuses {
        if matches!(record.status, EnforcementStatus::Failed { .. }) {
            flags.insert(record.intent.clone());
        }
    }
    for repair in repairs {
        if matches!(repair.result, EnforcementStatus::Failed { .. }) {
            flags.insert(repair.intent.clone());
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{apply_action, DefenderAction};
    use crate::intent::{ArtifactInstance, TechnicalMetadata};
    use crate::simulation::infra::{FileEntry, Host};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn netpol_sf() -> SecurityFunction {
        SecurityFunction {
            id: "netpol-nsf".into(),
            kind: SfKind::Nsf,
            capabilities: vec![Capability {
                technique_id: "d3f:NetworkTrafficFiltering".into(),
                params: vec!["dest_host".into()],
            }],
            reliability: 1.0,
            cost: 1.0,
        }
    }

    fn evictor_sf() -> SecurityFunction {
        SecurityFunction {
            id: "file-evictor-esf".into(),
            kind: SfKind::Esf,
            capabilities: vec![Capability {
                technique_id: "d3f:FileEviction".into(),
                params: vec!["host".into(), "path".into()],
            }],
            reliability: 1.0,
            cost: 1.0,
        }
    }

    fn block_intent() -> SecurityIntent {
        SecurityIntent {
            ot: "T1568".into(),
            md: TechnicalMetadata { entries: [("host".to_string(), "websrv".to_string())].into() },
            target: ArtifactInstance {
                class: "OutboundNetworkTraffic".into(),
                attributes: [("dest_host".to_string(), "c2.malicious.com".to_string())].into(),
                engaging_property: "produces".into(),
            },
            dt: "d3f:NetworkTrafficFiltering".into(),
            def_property: "blocks".into(),
        }
    }

    fn evict_intent() -> SecurityIntent {
        SecurityIntent {
            ot: "T1053.003".into(),
            md: TechnicalMetadata { entries: [("host".to_string(), "websrv".to_string())].into() },
            target: ArtifactInstance {
                class: "File".into(),
                attributes: [("path".to_string(), "malicious.sh".to_string())].into(),
                engaging_property: "creates".into(),
            },
            dt: "d3f:FileEviction".into(),
            def_property: "deletes".into(),
        }
    }

    fn infra_with_file() -> InfrastructureState {
        InfrastructureState {
            hosts: vec![Host {
                name: "websrv".into(),
                attacker_privileged: false,
                reboot_pending: false,
            }],
            files: vec![FileEntry {
                host: "websrv".into(),
                path: "malicious.sh".into(),
                owner: "attacker".into(),
                malicious: true,
                present: true,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn registry_indexes_by_capability_and_rejects_duplicates() {
        let mut registry = SfRegistry::new();
        registry.register(netpol_sf()).unwrap();
        registry.register(evictor_sf()).unwrap();
        let capable = registry.capable("d3f:NetworkTrafficFiltering");
        assert_eq!(capable.len(), 1);
        assert_eq!(capable[0].id, "netpol-nsf");
        assert!(registry.capable("d3f:FileEviction").iter().any(|s| s.id == "file-evictor-esf"));
        assert!(matches!(registry.register(netpol_sf()), Err(EnforcementError::DuplicateSf(_))));
    }

    #[test]
    fn translate_binds_from_attributes_and_metadata() {
        let mut registry = SfRegistry::new();
        registry.register(evictor_sf()).unwrap();
        let plan = translate_intent(&evict_intent(), &registry).unwrap();
        assert_eq!(plan.sf_id, "file-evictor-esf");
        assert_eq!(plan.parameters["path"], "malicious.sh"); // from the artifact
        assert_eq!(plan.parameters["host"], "websrv"); // from the metadata
    }

    #[test]
    fn translate_reports_no_capable_sf_and_missing_parameter() {
        let registry = SfRegistry::new();
        assert!(matches!(
            translate_intent(&evict_intent(), &registry),
            Err(TranslateError::NoCapableSf(_))
        ));

        let mut registry = SfRegistry::new();
        registry.register(evictor_sf()).unwrap();
        let mut intent = evict_intent();
        intent.md.entries.clear(); // host is no longer derivable
        match translate_intent(&intent, &registry) {
            Err(TranslateError::MissingParameter { sf, param }) => {
                assert_eq!(sf, "file-evictor-esf");
                assert_eq!(param, "host");
            }
            other => panic!("expected missing parameter, got {other:?}"),
        }
    }

    #[test]
    fn translate_prefers_lowest_cost_then_id() {
        let mut registry = SfRegistry::new();
        let mut cheap = netpol_sf();
        cheap.id = "zz-cheap".into();
        cheap.cost = 0.5;
        registry.register(netpol_sf()).unwrap();
        registry.register(cheap).unwrap();
        let plan = translate_intent(&block_intent(), &registry).unwrap();
        assert_eq!(plan.sf_id, "zz-cheap");
    }

    #[test]
    fn enforce_applies_the_block_effect() {
        let mut registry = SfRegistry::new();
        registry.register(netpol_sf()).unwrap();
        let mut infra = infra_with_file();
        let plan = translate_intent(&block_intent(), &registry).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let status = enforce(&plan, &registry, &[], &mut infra, &mut rng);
        assert!(status.is_enforced());
        assert!(infra.has_block_rule("c2.malicious.com"));
    }

    #[test]
    fn enforce_is_idempotent_on_satisfied_plans() {
        let mut registry = SfRegistry::new();
        registry.register(netpol_sf()).unwrap();
        let mut infra = infra_with_file();
        let plan = translate_intent(&block_intent(), &registry).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        enforce(&plan, &registry, &[], &mut infra, &mut rng);
        let before = infra.clone();
        let again = enforce(&plan, &registry, &[], &mut infra, &mut rng);
        assert!(again.is_enforced());
        assert_eq!(infra, before);
    }

    #[test]
    fn privileged_attacker_forces_permission_failure() {
        let mut registry = SfRegistry::new();
        registry.register(evictor_sf()).unwrap();
        let rules = vec![FailureRule {
            sf_id: "file-evictor-esf".into(),
            condition: FailureCondition::AttackerOwnedFilePrivileged,
            reason: "permission".into(),
        }];
        let mut infra = infra_with_file();
        infra.host_mut("websrv").unwrap().attacker_privileged = true;
        let plan = translate_intent(&evict_intent(), &registry).unwrap();
        let before = infra.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let status = enforce(&plan, &registry, &rules, &mut infra, &mut rng);
        assert_eq!(status, EnforcementStatus::failed("permission"));
        assert_eq!(infra, before); // failed plans never mutate
    }

    #[test]
    fn assurance_detects_and_repairs_drift() {
        let mut registry = SfRegistry::new();
        registry.register(netpol_sf()).unwrap();
        let mut infra = infra_with_file();
        let intent = block_intent();
        let mut store = IntentStore::new(5);
        apply_action(&mut store, &DefenderAction::InsertPersistent(intent.clone())).unwrap();

        let mut ever = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = translate_intent(&intent, &registry).unwrap();
        enforce(&plan, &registry, &[], &mut infra, &mut rng);
        ever.insert(intent.clone());

        // Attacker analogue removes the rule out-of-band.
        infra.remove_block_rule("c2.malicious.com");

        let report = assure(&store, &registry, &[], &mut infra, &mut ever, 3, &mut rng);
        assert_eq!(report.statuses.len(), 1);
        assert_eq!(report.statuses[0].status, EnforcementStatus::Drifted { detected_round: 3 });
        assert_eq!(report.repairs.len(), 1);
        assert!(report.repairs[0].drift);
        assert!(report.repairs[0].result.is_enforced());
        assert!(infra.has_block_rule("c2.malicious.com"));
        assert!(feedback(&report.statuses, &report.repairs).is_empty());
    }

    #[test]
    fn drift_with_failed_repair_is_flagged() {
        let mut registry = SfRegistry::new();
        registry.register(netpol_sf()).unwrap();
        let mut infra = infra_with_file();
        let intent = block_intent();
        let mut store = IntentStore::new(5);
        apply_action(&mut store, &DefenderAction::InsertPersistent(intent.clone())).unwrap();

        let mut ever = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = translate_intent(&intent, &registry).unwrap();
        enforce(&plan, &registry, &[], &mut infra, &mut rng);
        ever.insert(intent.clone());
        infra.remove_block_rule("c2.malicious.com");

        // The SF now fails unconditionally, so the repair cannot land.
        let rules = vec![FailureRule {
            sf_id: "netpol-nsf".into(),
            condition: FailureCondition::Always,
            reason: "controller unreachable".into(),
        }];
        let report = assure(&store, &registry, &rules, &mut infra, &mut ever, 4, &mut rng);
        assert_eq!(report.statuses[0].status, EnforcementStatus::Drifted { detected_round: 4 });
        assert!(report.repairs[0].drift);
        assert!(matches!(report.repairs[0].result, EnforcementStatus::Failed { .. }));
        let flags = feedback(&report.statuses, &report.repairs);
        assert!(flags.contains(&intent));
    }

    #[test]
    fn assurance_of_empty_store_is_empty() {
        let registry = SfRegistry::new();
        let mut infra = infra_with_file();
        let store = IntentStore::new(5);
        let mut ever = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = assure(&store, &registry, &[], &mut infra, &mut ever, 1, &mut rng);
        assert!(report.statuses.is_empty());
        assert!(report.repairs.is_empty());
    }

    #[test]
    fn failed_repair_is_flagged_for_feedback() {
        let mut registry = SfRegistry::new();
        registry.register(evictor_sf()).unwrap();
        let rules = vec![FailureRule {
            sf_id: "file-evictor-esf".into(),
            condition: FailureCondition::Always,
            reason: "permission".into(),
        }];
        let mut infra = infra_with_file();
        let intent = evict_intent();
        let mut store = IntentStore::new(5);
        apply_action(&mut store, &DefenderAction::InsertPersistent(intent.clone())).unwrap();
        let mut ever = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = assure(&store, &registry, &rules, &mut infra, &mut ever, 2, &mut rng);
        assert_eq!(report.statuses[0].status, EnforcementStatus::failed("permission"));
        let flags = feedback(&report.statuses, &report.repairs);
        assert!(flags.contains(&intent));
    }

    #[test]
    fn all_enforced_yields_no_flags() {
        let statuses = vec![IntentStatusRecord {
            intent: block_intent(),
            status: EnforcementStatus::Enforced,
        }];
        assert!(feedback(&statuses, &[]).is_empty());
    }

    #[test]
    fn host_reboot_clears_processes_but_persistence_survives() {
        let mut registry = SfRegistry::new();
        registry
            .register(SecurityFunction {
                id: "rebooter-esf".into(),
                kind: SfKind::Esf,
                capabilities: vec![Capability {
                    technique_id: "d3f:HostReboot".into(),
                    params: vec!["host".into()],
                }],
                reliability: 1.0,
                cost: 2.0,
            })
            .unwrap();
        let mut infra = infra_with_file();
        infra.processes.push(crate::simulation::infra::ProcessEntry {
            pid: "p-maljob".into(),
            host: "websrv".into(),
            image: "malicious.sh".into(),
            malicious: true,
            respawn_source: Some("maljob".into()),
        });
        infra.scheduled_jobs.push(crate::simulation::infra::ScheduledJob {
            id: "maljob".into(),
            host: "websrv".into(),
            script_path: "malicious.sh".into(),
            active: true,
        });
        let intent = SecurityIntent {
            ot: "T1556.003".into(),
            md: TechnicalMetadata { entries: [("host".to_string(), "websrv".to_string())].into() },
            target: ArtifactInstance {
                class: "Process".into(),
                attributes: [("pid".to_string(), "p-maljob".to_string())].into(),
                engaging_property: "invokes".into(),
            },
            dt: "d3f:HostReboot".into(),
            def_property: "terminates".into(),
        };
        let plan = translate_intent(&intent, &registry).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let status = enforce(&plan, &registry, &[], &mut infra, &mut rng);
        assert!(status.is_enforced());
        assert!(!infra.malicious_process_present());
        assert!(infra.scheduled_jobs[0].active);
        assert!(infra.file_present("websrv", "malicious.sh"));
    }
}
