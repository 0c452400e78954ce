//! The simulated infrastructure: hosts, files, processes, scheduled jobs,
//! DNS bindings, connections, and the enforcement artifacts defenders plant
//! (block rules, DNS denylist entries, syscall filters, disabled accounts).
//!
//! Mutation goes through the primitive operations below so their semantics
//! stay in one place; enforcement's effect table and the attacker script are
//! both built on them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Host {
    pub name: String,
    /// Attacker controls filesystem privileges on this host.
    #[serde(default)]
    pub attacker_privileged: bool,
    /// Set while a defender-initiated reboot is in progress; scheduled jobs
    /// do not run that round.
    #[serde(default)]
    pub reboot_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub host: String,
    pub path: String,
    #[serde(default = "default_owner")]
    pub owner: String,
    #[serde(default)]
    pub malicious: bool,
    #[serde(default = "default_true")]
    pub present: bool,
}

fn default_owner() -> String {
    "root".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessEntry {
    pub pid: String,
    pub host: String,
    pub image: String,
    #[serde(default)]
    pub malicious: bool,
    /// Scheduled job that respawns this process, when persistence backs it.
    #[serde(default)]
    pub respawn_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledJob {
    pub id: String,
    pub host: String,
    pub script_path: String,
    #[serde(default = "default_true")]
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsBinding {
    pub name: String,
    pub current_ip: String,
    /// Rotation period in rounds; 0 disables rotation.
    #[serde(default)]
    pub rotation_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub src_host: String,
    #[serde(default)]
    pub dest_domain: Option<String>,
    pub dest_ip: String,
    #[serde(default = "default_true")]
    pub active: bool,
}

/// Network policy entry blocking traffic to a destination (domain or IP).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRule {
    pub dest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallFilter {
    pub host: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisabledAccount {
    pub host: String,
    pub account: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfrastructureState {
    pub hosts: Vec<Host>,
    pub files: Vec<FileEntry>,
    pub processes: Vec<ProcessEntry>,
    pub scheduled_jobs: Vec<ScheduledJob>,
    pub dns_bindings: Vec<DnsBinding>,
    pub connections: Vec<Connection>,
    pub block_rules: Vec<BlockRule>,
    pub dns_denylist: Vec<String>,
    pub syscall_filters: Vec<SyscallFilter>,
    pub disabled_accounts: Vec<DisabledAccount>,
    #[serde(default)]
    pub objective_reached: bool,
    /// Domains successfully resolved during the current round.
    #[serde(default)]
    pub resolutions: Vec<String>,
}

/// Deterministic per-round digest of the infrastructure for traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfraSummary {
    pub attack_active: bool,
    pub objective_reached: bool,
    pub c2_active: bool,
    pub malicious_processes: u32,
    pub malicious_files: u32,
    pub active_jobs: u32,
    pub block_rules: u32,
    pub dns_denylist: u32,
    pub syscall_filters: u32,
}

impl InfrastructureState {
    pub fn host(&self, name: &str) -> Option<&Host> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn host_mut(&mut self, name: &str) -> Option<&mut Host> {
        self.hosts.iter_mut().find(|h| h.name == name)
    }

    pub fn file(&self, host: &str, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.host == host && f.path == path)
    }

    pub fn file_present(&self, host: &str, path: &str) -> bool {
        self.file(host, path).is_some_and(|f| f.present)
    }

    pub fn process(&self, host: &str, pid: &str) -> Option<&ProcessEntry> {
        self.processes.iter().find(|p| p.host == host && p.pid == pid)
    }

    pub fn dns_binding(&self, name: &str) -> Option<&DnsBinding> {
        self.dns_bindings.iter().find(|b| b.name == name)
    }

    pub fn is_denied(&self, domain: &str) -> bool {
        self.dns_denylist.iter().any(|d| d == domain)
    }

    pub fn has_block_rule(&self, dest: &str) -> bool {
        self.block_rules.iter().any(|r| r.dest == dest)
    }

    /// True when traffic to (domain, ip) matches a block rule.
    pub fn destination_blocked(&self, domain: Option<&str>, ip: &str) -> bool {
        self.block_rules.iter().any(|r| Some(r.dest.as_str()) == domain || r.dest == ip)
    }

    pub fn has_syscall_filter(&self, host: &str, image: &str) -> bool {
        self.syscall_filters.iter().any(|f| f.host == host && f.image == image)
    }

    pub fn is_account_disabled(&self, host: &str, account: &str) -> bool {
        self.disabled_accounts.iter().any(|a| a.host == host && a.account == account)
    }

    // ---- enforcement-side primitives -------------------------------------

    /// Adds a block rule; connections to a matching destination drop
    /// immediately, which keeps the block-rule invariant without an extra
    /// end-of-round sweep.
    pub fn add_block_rule(&mut self, dest: &str) {
        if !self.has_block_rule(dest) {
            self.block_rules.push(BlockRule { dest: dest.to_string() });
        }
        for conn in &mut self.connections {
            if conn.dest_domain.as_deref() == Some(dest) || conn.dest_ip == dest {
                conn.active = false;
            }
        }
    }

    pub fn remove_block_rule(&mut self, dest: &str) {
        self.block_rules.retain(|r| r.dest != dest);
    }

    pub fn add_dns_deny(&mut self, domain: &str) {
        if !self.is_denied(domain) {
            self.dns_denylist.push(domain.to_string());
        }
    }

    pub fn remove_dns_deny(&mut self, domain: &str) {
        self.dns_denylist.retain(|d| d != domain);
    }

    /// Marks the file absent. Returns false when the file was never tracked.
    pub fn evict_file(&mut self, host: &str, path: &str) -> bool {
        match self.files.iter_mut().find(|f| f.host == host && f.path == path) {
            Some(f) => {
                f.present = false;
                true
            }
            None => false,
        }
    }

    pub fn kill_process(&mut self, host: &str, pid: &str) {
        self.processes.retain(|p| !(p.host == host && p.pid == pid));
    }

    /// Installs a syscall filter and kills processes already running the
    /// filtered image on that host.
    pub fn add_syscall_filter(&mut self, host: &str, image: &str) {
        if !self.has_syscall_filter(host, image) {
            self.syscall_filters
                .push(SyscallFilter { host: host.to_string(), image: image.to_string() });
        }
        self.processes.retain(|p| !(p.host == host && p.image == image));
    }

    pub fn remove_syscall_filter(&mut self, host: &str, image: &str) {
        self.syscall_filters.retain(|f| !(f.host == host && f.image == image));
    }

    /// Clears malicious processes and connections on the host; scheduled
    /// jobs survive and stay suppressed while the reboot is pending.
    pub fn reboot_host(&mut self, host: &str) {
        self.processes.retain(|p| !(p.host == host && p.malicious));
        for conn in &mut self.connections {
            if conn.src_host == host {
                conn.active = false;
            }
        }
        if let Some(h) = self.host_mut(host) {
            h.reboot_pending = true;
        }
    }

    pub fn disable_account(&mut self, host: &str, account: &str) {
        if !self.is_account_disabled(host, account) {
            self.disabled_accounts
                .push(DisabledAccount { host: host.to_string(), account: account.to_string() });
        }
    }

    // ---- security status -------------------------------------------------

    pub fn c2_active(&self) -> bool {
        self.connections.iter().any(|c| c.active)
    }

    pub fn malicious_process_present(&self) -> bool {
        self.processes.iter().any(|p| p.malicious)
    }

    pub fn malicious_file_present(&self) -> bool {
        self.files.iter().any(|f| f.malicious && f.present)
    }

    /// An active job whose script is still on disk can respawn the attack.
    pub fn rearmable_persistence(&self) -> bool {
        self.scheduled_jobs.iter().any(|j| j.active && self.file_present(&j.host, &j.script_path))
    }

    /// Any condition that keeps the attack alive or re-armable. A dormant
    /// job whose script was evicted is tolerable residue and does not count.
    pub fn attack_active(&self) -> bool {
        self.objective_reached
            || self.c2_active()
            || self.malicious_process_present()
            || self.malicious_file_present()
            || self.rearmable_persistence()
    }

    /// Attacker foothold needed to run counter-drift actions or progress.
    pub fn attacker_foothold(&self) -> bool {
        self.c2_active() || self.malicious_process_present() || self.rearmable_persistence()
    }

    fn host_compromised(&self, host: &str) -> bool {
        self.files.iter().any(|f| f.host == host && f.malicious && f.present)
            || self.processes.iter().any(|p| p.host == host && p.malicious)
            || self
                .scheduled_jobs
                .iter()
                .any(|j| j.host == host && j.active && self.file_present(&j.host, &j.script_path))
    }

    /// Compact security-status label pairing per-host compromise bits with
    /// an attack-phase tag; this is the mapping from infrastructure state to
    /// the decision model's abstract state space.
    pub fn state_label(&self) -> String {
        let bits: String = self
            .hosts
            .iter()
            .map(|h| if self.host_compromised(&h.name) { '1' } else { '0' })
            .collect();
        let phase = if self.objective_reached {
            "done"
        } else if self.attack_active() {
            "active"
        } else {
            "idle"
        };
        format!("s:{bits}:{phase}")
    }

    /// All labels `state_label` can produce for this host count.
    pub fn all_state_labels(hosts: usize) -> Vec<String> {
        let mut out = Vec::new();
        for mask in 0..(1u32 << hosts) {
            let bits: String =
                (0..hosts).map(|i| if mask & (1 << i) != 0 { '1' } else { '0' }).collect();
            for phase in ["idle", "active", "done"] {
                out.push(format!("s:{bits}:{phase}"));
            }
        }
        out
    }

    pub fn summary(&self) -> InfraSummary {
        InfraSummary {
            attack_active: self.attack_active(),
            objective_reached: self.objective_reached,
            c2_active: self.c2_active(),
            malicious_processes: self.processes.iter().filter(|p| p.malicious).count() as u32,
            malicious_files: self.files.iter().filter(|f| f.malicious && f.present).count() as u32,
            active_jobs: self.scheduled_jobs.iter().filter(|j| j.active).count() as u32,
            block_rules: self.block_rules.len() as u32,
            dns_denylist: self.dns_denylist.len() as u32,
            syscall_filters: self.syscall_filters.len() as u32,
        }
    }
}
