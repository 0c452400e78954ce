//! From alerts to candidate security intents.
//!
//! An alert names one offensive technique and carries technical metadata.
//! Mapper rules bind that metadata onto digital-artifact instances; every
//! operable instance is then matched against the knowledge base's counter
//! techniques, and each (technique, artifact, counter) combination becomes
//! one candidate intent. Intents are minimal by construction: one engaged
//! artifact instance, one defensive technique.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::KnowledgeBase;

/// Structured attack-related data mapped to one offensive technique.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alert {
    pub id: String,
    pub technique_id: String,
    pub metadata: BTreeMap<String, String>,
}

/// Alert metadata with non-technical fields removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TechnicalMetadata {
    pub entries: BTreeMap<String, String>,
}

impl TechnicalMetadata {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Metadata keys that carry no technical meaning for intent fulfillment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionList {
    pub keys: BTreeSet<String>,
}

impl Default for ExclusionList {
    fn default() -> Self {
        ExclusionList {
            keys: ["id", "timestamp", "analyst_note"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One detection round's worth of alerts. Each alert already carries its
/// offensive technique, so the (alert, technique) pairing holds by
/// construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub alerts: Vec<Alert>,
}

impl Observation {
    pub fn new(alerts: Vec<Alert>) -> Self {
        Observation { alerts }
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty()
    }

    /// (alert, technique id) pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&Alert, &str)> {
        self.alerts.iter().map(|a| (a, a.technique_id.as_str()))
    }

    /// Sorted distinct technique ids, for observation labeling.
    pub fn technique_ids(&self) -> BTreeSet<&str> {
        self.alerts.iter().map(|a| a.technique_id.as_str()).collect()
    }
}

/// A digital-artifact instance with concrete attributes, engaged by an
/// offensive technique through `engaging_property`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactInstance {
    pub class: String,
    pub attributes: BTreeMap<String, String>,
    pub engaging_property: String,
}

/// Declarative binding from alert metadata to one artifact instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapperRule {
    pub technique_id: String,
    pub property: String,
    pub artifact_class: String,
    /// artifact attribute name -> alert metadata key
    pub bindings: BTreeMap<String, String>,
}

/// The security intent tuple: offensive technique, technical metadata,
/// targeted artifact instance, and the defensive technique countering it.
///
/// `def_property` pins down which restriction of the defensive technique
/// applies when it has several. Persistence is not part of the intent; it is
/// assigned by the defender's action choice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SecurityIntent {
    pub ot: String,
    pub md: TechnicalMetadata,
    pub target: ArtifactInstance,
    pub dt: String,
    pub def_property: String,
}

impl SecurityIntent {
    /// Offensive context (OT, MD) shared by intents that a modify action may
    /// exchange.
    pub fn same_context(&self, other: &SecurityIntent) -> bool {
        self.ot == other.ot && self.md == other.md
    }
}

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("unknown offensive technique `{0}`")]
    UnknownTechnique(String),
    #[error("mapper rule for `{technique}` does not match any restriction ({property}, {artifact_class})")]
    RuleMismatch { technique: String, property: String, artifact_class: String },
}

/// Strips excluded keys from an alert's metadata.
pub fn extract_metadata(alert: &Alert, exclusions: &ExclusionList) -> TechnicalMetadata {
    TechnicalMetadata {
        entries: alert
            .metadata
            .iter()
            .filter(|(k, _)| !exclusions.keys.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

/// Checks that every rule's (technique, property, artifact class) triple
/// matches a restriction of the technique. A rule class may specialize the
/// declared restriction class.
pub fn validate_rules(rules: &[MapperRule], kb: &KnowledgeBase) -> Result<(), IntentError> {
    for rule in rules {
        let ot = kb
            .offensive_techniques
            .get(&rule.technique_id)
            .ok_or_else(|| IntentError::UnknownTechnique(rule.technique_id.clone()))?;
        let matches = ot.restrictions.iter().any(|r| {
            r.property == rule.property
                && kb.is_subclass_of(&rule.artifact_class, &r.artifact_class)
        });
        if !matches {
            return Err(IntentError::RuleMismatch {
                technique: rule.technique_id.clone(),
                property: rule.property.clone(),
                artifact_class: rule.artifact_class.clone(),
            });
        }
    }
    Ok(())
}

/// Instantiates every artifact the technique engages for which the alert
/// carries enough metadata. A rule whose bound keys are missing yields no
/// instance; the artifact is simply omitted.
pub fn instantiate_artifacts(
    alert: &Alert,
    ot_id: &str,
    kb: &KnowledgeBase,
    rules: &[MapperRule],
) -> Result<Vec<ArtifactInstance>, IntentError> {
    if !kb.offensive_techniques.contains_key(ot_id) {
        return Err(IntentError::UnknownTechnique(ot_id.to_string()));
    }
    let mut out = Vec::new();
    for rule in rules.iter().filter(|r| r.technique_id == ot_id) {
        let mut attributes = BTreeMap::new();
        let mut complete = true;
        for (attr, md_key) in &rule.bindings {
            match alert.metadata.get(md_key) {
                Some(value) if !value.is_empty() => {
                    attributes.insert(attr.clone(), value.clone());
                }
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            out.push(ArtifactInstance {
                class: rule.artifact_class.clone(),
                attributes,
                engaging_property: rule.property.clone(),
            });
        }
    }
    Ok(out)
}

/// An instance is operable when every required attribute of its class,
/// including inherited ones, has a non-empty value.
pub fn is_operable(instance: &ArtifactInstance, kb: &KnowledgeBase) -> bool {
    match kb.required_attributes(&instance.class) {
        Ok(required) => required
            .iter()
            .all(|attr| instance.attributes.get(*attr).is_some_and(|v| !v.is_empty())),
        Err(_) => false,
    }
}

/// Maps an observation to its candidate intent set: for each alert,
/// instantiate the engaged artifacts, keep the operable ones, and emit one
/// intent per compatible counter technique. Field-wise duplicates collapse.
pub fn derive_candidates(
    observation: &Observation,
    kb: &KnowledgeBase,
    rules: &[MapperRule],
    exclusions: &ExclusionList,
) -> Result<BTreeSet<SecurityIntent>, IntentError> {
    let mut out = BTreeSet::new();
    for (alert, ot_id) in observation.pairs() {
        let ot = kb
            .offensive_techniques
            .get(ot_id)
            .ok_or_else(|| IntentError::UnknownTechnique(ot_id.to_string()))?;
        let md = extract_metadata(alert, exclusions);
        for instance in instantiate_artifacts(alert, ot_id, kb, rules)? {
            if !is_operable(&instance, kb) {
                continue;
            }
            let counters = kb
                .counter_techniques(ot, &instance.engaging_property, &instance.class)
                .unwrap_or_default();
            for (dt, def_property) in counters {
                out.insert(SecurityIntent {
                    ot: ot_id.to_string(),
                    md: md.clone(),
                    target: instance.clone(),
                    dt: dt.id.clone(),
                    def_property: def_property.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{compatible, load_knowledge_base};

    fn fig4_kb() -> KnowledgeBase {
        load_knowledge_base(include_str!("../../../scenarios/fig4.kb")).unwrap()
    }

    fn dns_kb() -> KnowledgeBase {
        load_knowledge_base(include_str!("../../../scenarios/dns_denylist.kb")).unwrap()
    }

    fn alert(id: &str, technique: &str, pairs: &[(&str, &str)]) -> Alert {
        Alert {
            id: id.to_string(),
            technique_id: technique.to_string(),
            metadata: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    fn fig4_rules() -> Vec<MapperRule> {
        vec![
            MapperRule {
                technique_id: "T1053.003".into(),
                property: "creates".into(),
                artifact_class: "File".into(),
                bindings: [("path".to_string(), "script_path".to_string())].into(),
            },
            MapperRule {
                technique_id: "T1568".into(),
                property: "produces".into(),
                artifact_class: "OutboundNetworkTraffic".into(),
                bindings: [("dest_host".to_string(), "dest_domain".to_string())].into(),
            },
        ]
    }

    fn fig4_observation() -> Observation {
        Observation::new(vec![
            alert(
                "al-1",
                "T1053.003",
                &[("host", "websrv"), ("job_id", "maljob"), ("script_path", "malicious.sh")],
            ),
            alert("al-2", "T1568", &[("host", "websrv"), ("dest_domain", "c2.malicious.com")]),
        ])
    }

    #[test]
    fn extract_metadata_strips_default_exclusions() {
        let a = alert(
            "x",
            "T1568",
            &[("id", "x"), ("src_ip", "10.0.0.9"), ("dest_domain", "evil.example")],
        );
        let md = extract_metadata(&a, &ExclusionList::default());
        assert!(md.get("id").is_none());
        assert_eq!(md.get("src_ip"), Some("10.0.0.9"));
        assert_eq!(md.get("dest_domain"), Some("evil.example"));
    }

    #[test]
    fn extract_metadata_can_yield_empty() {
        let a = alert("x", "T1568", &[("timestamp", "r1")]);
        let md = extract_metadata(&a, &ExclusionList::default());
        assert!(md.entries.is_empty());
    }

    #[test]
    fn c2_alert_keeps_host_and_destination() {
        let a = alert(
            "al-2",
            "T1568",
            &[("id", "al-2"), ("host", "websrv"), ("dest_domain", "c2.malicious.com")],
        );
        let md = extract_metadata(&a, &ExclusionList::default());
        assert_eq!(md.get("host"), Some("websrv"));
        assert_eq!(md.get("dest_domain"), Some("c2.malicious.com"));
        assert!(md.get("id").is_none());
    }

    #[test]
    fn persistence_alert_yields_file_instance() {
        let kb = fig4_kb();
        let a = alert("al-1", "T1053.003", &[("script_path", "malicious.sh")]);
        let instances = instantiate_artifacts(&a, "T1053.003", &kb, &fig4_rules()).unwrap();
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].class, "File");
        assert_eq!(instances[0].attributes["path"], "malicious.sh");
        assert_eq!(instances[0].engaging_property, "creates");
    }

    #[test]
    fn missing_bound_key_omits_the_artifact() {
        let kb = fig4_kb();
        let a = alert("al-1", "T1053.003", &[("host", "websrv")]);
        let instances = instantiate_artifacts(&a, "T1053.003", &kb, &fig4_rules()).unwrap();
        assert!(instances.is_empty());
    }

    #[test]
    fn no_rules_for_technique_yields_nothing() {
        let kb = fig4_kb();
        let a = alert("al-1", "T1053.003", &[("script_path", "malicious.sh")]);
        let instances = instantiate_artifacts(&a, "T1053.003", &kb, &[]).unwrap();
        assert!(instances.is_empty());
    }

    #[test]
    fn operability_checks_required_attributes() {
        let kb = fig4_kb();
        let file = ArtifactInstance {
            class: "File".into(),
            attributes: [("path".to_string(), "malicious.sh".to_string())].into(),
            engaging_property: "creates".into(),
        };
        assert!(is_operable(&file, &kb));

        let traffic = ArtifactInstance {
            class: "OutboundNetworkTraffic".into(),
            attributes: BTreeMap::new(),
            engaging_property: "produces".into(),
        };
        assert!(!is_operable(&traffic, &kb));

        let service = ArtifactInstance {
            class: "NetworkTraffic".into(),
            attributes: BTreeMap::new(),
            engaging_property: "produces".into(),
        };
        assert!(is_operable(&service, &kb));
    }

    #[test]
    fn fig4_observation_derives_the_two_use_case_intents() {
        let kb = fig4_kb();
        let candidates =
            derive_candidates(&fig4_observation(), &kb, &fig4_rules(), &ExclusionList::default())
                .unwrap();
        assert_eq!(candidates.len(), 2);
        assert!(candidates.iter().any(|i| {
            i.ot == "T1568"
                && i.dt == "d3f:NetworkTrafficFiltering"
                && i.target.class == "OutboundNetworkTraffic"
                && i.target.attributes["dest_host"] == "c2.malicious.com"
        }));
        assert!(candidates.iter().any(|i| {
            i.ot == "T1053.003"
                && i.dt == "d3f:FileEviction"
                && i.target.class == "File"
                && i.target.attributes["path"] == "malicious.sh"
        }));
    }

    #[test]
    fn dns_lookup_observation_derives_denylisting_candidate() {
        let kb = dns_kb();
        let rules = vec![
            MapperRule {
                technique_id: "T1568".into(),
                property: "produces".into(),
                artifact_class: "OutboundInternetDNSLookupTraffic".into(),
                bindings: [
                    ("domain".to_string(), "queried_domain".to_string()),
                    ("dest_host".to_string(), "dns_server".to_string()),
                ]
                .into(),
            },
            MapperRule {
                technique_id: "T1568".into(),
                property: "invokes".into(),
                artifact_class: "Process".into(),
                bindings: [("pid".to_string(), "pid".to_string())].into(),
            },
        ];
        let obs = Observation::new(vec![alert(
            "al-9",
            "T1568",
            &[
                ("host", "corpserv"),
                ("pid", "4242"),
                ("queried_domain", "c2.malicious.com"),
                ("dns_server", "198.51.100.53"),
            ],
        )]);
        let candidates = derive_candidates(&obs, &kb, &rules, &ExclusionList::default()).unwrap();
        assert!(candidates.iter().any(|i| {
            i.dt == "d3f:DNSDenylisting"
                && i.target.class == "OutboundInternetDNSLookupTraffic"
                && i.target.attributes["domain"] == "c2.malicious.com"
        }));
    }

    #[test]
    fn empty_observation_derives_nothing() {
        let kb = fig4_kb();
        let candidates = derive_candidates(
            &Observation::default(),
            &kb,
            &fig4_rules(),
            &ExclusionList::default(),
        )
        .unwrap();
        assert!(candidates.is_empty());
    }

    #[test]
    fn unknown_technique_in_observation_errors() {
        let kb = fig4_kb();
        let obs = Observation::new(vec![alert("al-1", "T9999", &[])]);
        assert!(matches!(
            derive_candidates(&obs, &kb, &fig4_rules(), &ExclusionList::default()),
            Err(IntentError::UnknownTechnique(_))
        ));
    }

    #[test]
    fn every_candidate_is_compatible_operable_and_minimal() {
        let kb = fig4_kb();
        let candidates =
            derive_candidates(&fig4_observation(), &kb, &fig4_rules(), &ExclusionList::default())
                .unwrap();
        for intent in &candidates {
            let off = kb.offensive_category(&intent.target.engaging_property).unwrap();
            let def = kb.defensive_category(&intent.def_property).unwrap();
            assert!(compatible(off, def));
            assert!(is_operable(&intent.target, &kb));
            // Minimality: the intent engages exactly one restriction of its
            // offensive technique.
            let ot = &kb.offensive_techniques[&intent.ot];
            assert!(ot.restrictions.iter().any(|r| {
                r.property == intent.target.engaging_property
                    && kb.is_subclass_of(&intent.target.class, &r.artifact_class)
            }));
        }
    }

    #[test]
    fn derivation_is_monotone_in_the_observation() {
        let kb = fig4_kb();
        let rules = fig4_rules();
        let full = fig4_observation();
        let partial = Observation::new(vec![full.alerts[0].clone()]);
        let sub = derive_candidates(&partial, &kb, &rules, &ExclusionList::default()).unwrap();
        let all = derive_candidates(&full, &kb, &rules, &ExclusionList::default()).unwrap();
        assert!(sub.is_subset(&all));
    }

    #[test]
    fn validate_rules_rejects_unmatched_rule() {
        let kb = fig4_kb();
        let bad = vec![MapperRule {
            technique_id: "T1053.003".into(),
            property: "produces".into(),
            artifact_class: "File".into(),
            bindings: BTreeMap::new(),
        }];
        assert!(matches!(validate_rules(&bad, &kb), Err(IntentError::RuleMismatch { .. })));
        assert!(validate_rules(&fig4_rules(), &kb).is_ok());
    }
}
