//! Noisy detector: realizes the observation function generatively. Each
//! detector entry watches one attack condition and emits its alert with the
//! configured true-positive probability while the condition is active, plus
//! false-positive alerts at the configured rate.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::intent::{Alert, Observation};

use super::infra::InfrastructureState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEntry {
    pub technique_id: String,
    pub condition: DetectorCondition,
    pub true_positive: f64,
    #[serde(default)]
    pub false_positive: f64,
    /// Alert metadata template; values may reference the condition's
    /// placeholders as `{name}`.
    pub metadata: BTreeMap<String, String>,
    /// Literal metadata for false-positive alerts; empty when omitted.
    #[serde(default)]
    pub fp_metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorCondition {
    /// An active scheduled job whose script is on disk.
    Persistence,
    /// An active connection.
    C2Active,
    /// A domain was resolved this round.
    DnsLookup,
    /// A malicious process is running.
    MaliciousProcess,
    ObjectiveReached,
}

impl DetectorCondition {
    /// Placeholders the condition can substitute into metadata templates.
    pub fn placeholders(&self) -> &'static [&'static str] {
        match self {
            DetectorCondition::Persistence => &["host", "job_id", "script_path"],
            DetectorCondition::C2Active => &["host", "dest_domain", "dest_ip"],
            DetectorCondition::DnsLookup => &["host", "pid", "queried_domain"],
            DetectorCondition::MaliciousProcess => &["host", "pid", "image"],
            DetectorCondition::ObjectiveReached => &["host"],
        }
    }

    /// Substitution values when the condition is active; the first matching
    /// entity in iteration order keeps emission deterministic.
    fn bindings(&self, infra: &InfrastructureState) -> Option<BTreeMap<String, String>> {
        match self {
            DetectorCondition::Persistence => infra
                .scheduled_jobs
                .iter()
                .find(|j| j.active && infra.file_present(&j.host, &j.script_path))
                .map(|j| {
                    [
                        ("host".to_string(), j.host.clone()),
                        ("job_id".to_string(), j.id.clone()),
                        ("script_path".to_string(), j.script_path.clone()),
                    ]
                    .into()
                }),
            DetectorCondition::C2Active => {
                let c = infra.connections.iter().find(|c| c.active)?;
                let mut map: BTreeMap<String, String> = [
                    ("host".to_string(), c.src_host.clone()),
                    ("dest_ip".to_string(), c.dest_ip.clone()),
                ]
                .into();
                if let Some(domain) = &c.dest_domain {
                    map.insert("dest_domain".to_string(), domain.clone());
                }
                Some(map)
            }
            DetectorCondition::DnsLookup => {
                let domain = infra.resolutions.first()?;
                let process = infra.processes.iter().find(|p| p.malicious)?;
                Some(
                    [
                        ("host".to_string(), process.host.clone()),
                        ("pid".to_string(), process.pid.clone()),
                        ("queried_domain".to_string(), domain.clone()),
                    ]
                    .into(),
                )
            }
            DetectorCondition::MaliciousProcess => {
                infra.processes.iter().find(|p| p.malicious).map(|p| {
                    [
                        ("host".to_string(), p.host.clone()),
                        ("pid".to_string(), p.pid.clone()),
                        ("image".to_string(), p.image.clone()),
                    ]
                    .into()
                })
            }
            DetectorCondition::ObjectiveReached => {
                if infra.objective_reached {
                    let host = infra.hosts.first()?;
                    Some([("host".to_string(), host.name.clone())].into())
                } else {
                    None
                }
            }
        }
    }
}

fn substitute(template: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = template.to_string();
    for (key, value) in bindings {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Emits this round's observation. Alert ids and timestamps are derived from
/// the round index, so identical seeds give identical observations.
pub fn detector_emit<R: Rng>(
    infra: &InfrastructureState,
    entries: &[DetectorEntry],
    round: u32,
    rng: &mut R,
) -> Observation {
    let mut alerts = Vec::new();
    let mut seq = 0u32;
    let mut push =
        |alerts: &mut Vec<Alert>, technique: &str, metadata: BTreeMap<String, String>| {
            seq += 1;
            let mut metadata = metadata;
            metadata.insert("id".to_string(), format!("al-r{round}-{seq}"));
            metadata.insert("timestamp".to_string(), format!("r{round}"));
            alerts.push(Alert {
                id: format!("al-r{round}-{seq}"),
                technique_id: technique.to_string(),
                metadata,
            });
        };
    for entry in entries {
        if let Some(bindings) = entry.condition.bindings(infra) {
            if entry.true_positive >= 1.0 || rng.random::<f64>() < entry.true_positive {
                let metadata = entry
                    .metadata
                    .iter()
                    .map(|(k, v)| (k.clone(), substitute(v, &bindings)))
                    .collect();
                push(&mut alerts, &entry.technique_id, metadata);
            }
        }
        if entry.false_positive > 0.0 && rng.random::<f64>() < entry.false_positive {
            push(&mut alerts, &entry.technique_id, entry.fp_metadata.clone());
        }
    }
    Observation::new(alerts)
}

/// Label of an observation in the decision model's observation alphabet:
/// the sorted distinct technique ids joined with `+`, or `none`.
pub fn observation_label(observation: &Observation) -> String {
    let ids = observation.technique_ids();
    if ids.is_empty() {
        "none".to_string()
    } else {
        ids.into_iter().collect::<Vec<_>>().join("+")
    }
}

/// Every label `observation_label` can produce for a detector's technique
/// set.
pub fn all_observation_labels(entries: &[DetectorEntry]) -> Vec<String> {
    let mut techniques: Vec<&str> = entries.iter().map(|e| e.technique_id.as_str()).collect();
    techniques.sort();
    techniques.dedup();
    let n = techniques.len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask == 0 {
            out.push("none".to_string());
            continue;
        }
        let subset: Vec<&str> = techniques
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| *t)
            .collect();
        out.push(subset.join("+"));
    }
    out
}
