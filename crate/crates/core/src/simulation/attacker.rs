//! Scripted stochastic attacker.
//!
//! Standing behaviors run every round: counter-drift removal of defender
//! artifacts, DNS rotation, process respawn from scheduled jobs, and C2
//! maintenance (resolve, then connect). Ordered phases fire on top of them,
//! one attempt per round, once their precondition has held long enough.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::infra::{Connection, FileEntry, InfrastructureState, ProcessEntry, ScheduledJob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerScript {
    /// C2 channel maintenance: while a malicious process runs on `host`,
    /// resolve `domain` and keep a connection to the resolved address.
    #[serde(default)]
    pub c2: Option<C2Behavior>,
    #[serde(default)]
    pub phases: Vec<AttackPhase>,
    /// Per-round, per-artifact probability of removing a defender artifact
    /// (block rule, denylist entry, syscall filter) out-of-band. Requires an
    /// active foothold.
    #[serde(default)]
    pub counter_drift_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct C2Behavior {
    pub host: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPhase {
    pub name: String,
    pub precondition: PhasePrecondition,
    pub success_prob: f64,
    /// Full prior rounds the precondition must have held before attempts
    /// begin.
    #[serde(default)]
    pub min_rounds: u32,
    #[serde(default)]
    pub effect: PhaseEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePrecondition {
    Always,
    C2Active,
    ProcessActive,
    PersistenceActive,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseEffect {
    /// The attack reaches its objective (exfiltration, credential theft, ...).
    #[default]
    ReachObjective,
    EstablishPersistence {
        host: String,
        job_id: String,
        script_path: String,
    },
    SpawnProcess {
        host: String,
        pid: String,
        image: String,
    },
}

/// Per-episode attacker state: phase completion and precondition streaks.
#[derive(Debug, Clone, Default)]
pub struct AttackerRuntime {
    completed: Vec<bool>,
    held_rounds: Vec<u32>,
}

impl AttackerRuntime {
    pub fn new(script: &AttackerScript) -> Self {
        AttackerRuntime {
            completed: vec![false; script.phases.len()],
            held_rounds: vec![0; script.phases.len()],
        }
    }

    /// True when no incomplete phase can ever fire again without a foothold.
    pub fn exhausted(&self, script: &AttackerScript, infra: &InfrastructureState) -> bool {
        if infra.attacker_foothold() {
            return false;
        }
        script
            .phases
            .iter()
            .zip(&self.completed)
            .all(|(phase, done)| *done || phase.precondition != PhasePrecondition::Always)
    }
}

fn precondition_holds(precondition: PhasePrecondition, infra: &InfrastructureState) -> bool {
    match precondition {
        PhasePrecondition::Always => true,
        PhasePrecondition::C2Active => infra.c2_active(),
        PhasePrecondition::ProcessActive => infra.malicious_process_present(),
        PhasePrecondition::PersistenceActive => infra.rearmable_persistence(),
    }
}

/// Advances the attack by one round. Deterministic for a given RNG stream;
/// the sub-steps always run in the same order: counter-drift, reboot
/// completion, DNS rotation, job-driven process maintenance, C2 maintenance,
/// phase attempt.
pub fn attacker_step<R: Rng>(
    infra: &mut InfrastructureState,
    script: &AttackerScript,
    runtime: &mut AttackerRuntime,
    round: u32,
    rng: &mut R,
) {
    infra.resolutions.clear();

    // Counter-drift: with a foothold, each defender artifact is removed
    // independently with the configured probability.
    if script.counter_drift_prob > 0.0 && infra.attacker_foothold() {
        let p = script.counter_drift_prob;
        let rules: Vec<String> = infra.block_rules.iter().map(|r| r.dest.clone()).collect();
        for dest in rules {
            if rng.random::<f64>() < p {
                infra.remove_block_rule(&dest);
            }
        }
        let denied: Vec<String> = infra.dns_denylist.clone();
        for domain in denied {
            if rng.random::<f64>() < p {
                infra.remove_dns_deny(&domain);
            }
        }
        let filters: Vec<(String, String)> =
            infra.syscall_filters.iter().map(|f| (f.host.clone(), f.image.clone())).collect();
        for (host, image) in filters {
            if rng.random::<f64>() < p {
                infra.remove_syscall_filter(&host, &image);
            }
        }
    }

    // Reboots initiated last round complete now; their hosts stay quiet for
    // this step only.
    let rebooting: Vec<String> =
        infra.hosts.iter().filter(|h| h.reboot_pending).map(|h| h.name.clone()).collect();
    for name in &rebooting {
        if let Some(h) = infra.host_mut(name) {
            h.reboot_pending = false;
        }
    }
    let host_quiet = |host: &str| rebooting.iter().any(|h| h == host);

    // DNS rotation.
    for binding in &mut infra.dns_bindings {
        if binding.rotation_rounds > 0 && round.is_multiple_of(binding.rotation_rounds) {
            binding.current_ip = format!("203.0.113.{}", rng.random_range(2..250u32));
        }
    }

    // Scheduled jobs respawn their process when the script is on disk and no
    // syscall filter blocks the image; otherwise the job-backed process dies.
    // A process whose source job disappeared dies with it.
    let job_ids: Vec<String> = infra.scheduled_jobs.iter().map(|j| j.id.clone()).collect();
    infra.processes.retain(|p| match &p.respawn_source {
        Some(src) => job_ids.contains(src),
        None => true,
    });
    let jobs: Vec<ScheduledJob> = infra.scheduled_jobs.clone();
    for job in jobs {
        let can_run = job.active
            && !host_quiet(&job.host)
            && infra.file_present(&job.host, &job.script_path)
            && !infra.has_syscall_filter(&job.host, &job.script_path);
        if can_run {
            let pid = format!("p-{}", job.id);
            if infra.process(&job.host, &pid).is_none() {
                infra.processes.push(ProcessEntry {
                    pid,
                    host: job.host.clone(),
                    image: job.script_path.clone(),
                    malicious: true,
                    respawn_source: Some(job.id.clone()),
                });
            }
        } else {
            infra.processes.retain(|p| p.respawn_source.as_deref() != Some(job.id.as_str()));
        }
    }

    // C2 maintenance: the channel needs a fresh resolution every round (the
    // address rotates), an unblocked path, and a live process to hold it.
    if let Some(c2) = &script.c2 {
        let process_alive = infra.processes.iter().any(|p| p.host == c2.host && p.malicious)
            && !host_quiet(&c2.host);
        let resolved = process_alive && !infra.is_denied(&c2.domain);
        if resolved {
            infra.resolutions.push(c2.domain.clone());
        }
        let ip = infra.dns_binding(&c2.domain).map(|b| b.current_ip.clone());
        let reachable = match (&ip, resolved) {
            (Some(ip), true) => !infra.destination_blocked(Some(&c2.domain), ip),
            _ => false,
        };
        let existing = infra.connections.iter_mut().find(|c| {
            c.src_host == c2.host && c.dest_domain.as_deref() == Some(c2.domain.as_str())
        });
        if reachable {
            let ip = ip.expect("reachable implies a binding");
            match existing {
                Some(conn) => {
                    conn.dest_ip = ip;
                    conn.active = true;
                }
                None => infra.connections.push(Connection {
                    src_host: c2.host.clone(),
                    dest_domain: Some(c2.domain.clone()),
                    dest_ip: ip,
                    active: true,
                }),
            }
        } else if let Some(conn) = existing {
            conn.active = false;
        }
    }

    // Phase attempt: the first incomplete phase whose precondition holds,
    // once the streak requirement is met.
    for (idx, phase) in script.phases.iter().enumerate() {
        if runtime.completed[idx] {
            continue;
        }
        if !precondition_holds(phase.precondition, infra) {
            break;
        }
        if runtime.held_rounds[idx] >= phase.min_rounds && rng.random::<f64>() < phase.success_prob
        {
            apply_phase_effect(&phase.effect, infra);
            runtime.completed[idx] = true;
        }
        runtime.held_rounds[idx] += 1;
        break;
    }
}

fn apply_phase_effect(effect: &PhaseEffect, infra: &mut InfrastructureState) {
    match effect {
        PhaseEffect::ReachObjective => infra.objective_reached = true,
        PhaseEffect::EstablishPersistence { host, job_id, script_path } => {
            if infra.file(host, script_path).is_none() {
                infra.files.push(FileEntry {
                    host: host.clone(),
                    path: script_path.clone(),
                    owner: "attacker".to_string(),
                    malicious: true,
                    present: true,
                });
            }
            if !infra.scheduled_jobs.iter().any(|j| &j.id == job_id) {
                infra.scheduled_jobs.push(ScheduledJob {
                    id: job_id.clone(),
                    host: host.clone(),
                    script_path: script_path.clone(),
                    active: true,
                });
            }
        }
        PhaseEffect::SpawnProcess { host, pid, image } => {
            if infra.process(host, pid).is_none() {
                infra.processes.push(ProcessEntry {
                    pid: pid.clone(),
                    host: host.clone(),
                    image: image.clone(),
                    malicious: true,
                    respawn_source: None,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::infra::{DnsBinding, Host};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fig4_like_infra() -> InfrastructureState {
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
            scheduled_jobs: vec![ScheduledJob {
                id: "maljob".into(),
                host: "websrv".into(),
                script_path: "malicious.sh".into(),
                active: true,
            }],
            dns_bindings: vec![DnsBinding {
                name: "c2.malicious.com".into(),
                current_ip: "203.0.113.10".into(),
                rotation_rounds: 1,
            }],
            ..Default::default()
        }
    }

    fn c2_script() -> AttackerScript {
        AttackerScript {
            c2: Some(C2Behavior { host: "websrv".into(), domain: "c2.malicious.com".into() }),
            phases: vec![],
            counter_drift_prob: 0.0,
        }
    }

    #[test]
    fn job_respawns_process_and_reestablishes_connection() {
        let mut infra = fig4_like_infra();
        let script = c2_script();
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        assert!(infra.malicious_process_present());
        assert!(infra.c2_active());

        // Kill the process; the job brings it back next step.
        infra.kill_process("websrv", "p-maljob");
        assert!(!infra.malicious_process_present());
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(infra.malicious_process_present());
    }

    #[test]
    fn block_rule_prevents_connection_but_not_persistence() {
        let mut infra = fig4_like_infra();
        let script = c2_script();
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        infra.add_block_rule("c2.malicious.com");
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        assert!(!infra.c2_active());
        assert!(infra.malicious_process_present());
        assert!(infra.file_present("websrv", "malicious.sh"));
    }

    #[test]
    fn evicted_script_and_removed_job_leave_attack_dormant() {
        let mut infra = fig4_like_infra();
        let script = c2_script();
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        infra.evict_file("websrv", "malicious.sh");
        infra.scheduled_jobs.clear();
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(!infra.malicious_process_present());
        assert!(!infra.c2_active());
        assert!(!infra.attack_active());
        assert!(rt.exhausted(&script, &infra));
    }

    #[test]
    fn denylisted_domain_stops_resolution_and_connection() {
        let mut infra = fig4_like_infra();
        let script = c2_script();
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        assert!(infra.c2_active());
        infra.add_dns_deny("c2.malicious.com");
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(!infra.c2_active());
        assert!(infra.resolutions.is_empty());
    }

    #[test]
    fn counter_drift_removes_block_rule_with_probability_one() {
        let mut infra = fig4_like_infra();
        let mut script = c2_script();
        script.counter_drift_prob = 1.0;
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        infra.add_block_rule("c2.malicious.com");
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(!infra.has_block_rule("c2.malicious.com"));
        assert!(infra.c2_active());
    }

    #[test]
    fn phase_waits_for_streak_then_reaches_objective() {
        let mut infra = fig4_like_infra();
        let mut script = c2_script();
        script.phases.push(AttackPhase {
            name: "exfiltrate".into(),
            precondition: PhasePrecondition::C2Active,
            success_prob: 1.0,
            min_rounds: 2,
            effect: PhaseEffect::ReachObjective,
        });
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        assert!(!infra.objective_reached);
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(!infra.objective_reached);
        attacker_step(&mut infra, &script, &mut rt, 3, &mut rng);
        assert!(infra.objective_reached);
    }

    #[test]
    fn reboot_suppresses_job_for_one_step() {
        let mut infra = fig4_like_infra();
        let script = c2_script();
        let mut rt = AttackerRuntime::new(&script);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        attacker_step(&mut infra, &script, &mut rt, 1, &mut rng);
        infra.reboot_host("websrv");
        assert!(!infra.malicious_process_present());
        attacker_step(&mut infra, &script, &mut rt, 2, &mut rng);
        assert!(!infra.malicious_process_present(), "host is still rebooting");
        attacker_step(&mut infra, &script, &mut rt, 3, &mut rng);
        assert!(infra.malicious_process_present(), "persistence survived the reboot");
    }
}
