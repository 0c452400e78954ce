//! `acd` — operator CLI: validate and query knowledge bases, derive
//! candidate intents, train and evaluate planners, run episodes, and replay
//! traces. Machine-readable output goes to stdout, diagnostics to stderr.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use acd_core::decision::{
    evaluate_policy, q_learning_train, GreedyMyopic, NoOpPolicy, OracleScripted, Planner,
    QHyperparams, RandomPolicy, TabularQ,
};
use acd_core::intent::{derive_candidates, Alert, Observation};
use acd_core::ontology::{load_knowledge_base, KnowledgeBase};
use acd_core::simulation::{load_scenario, run_episode, EpisodeTrace, Scenario, SimEnv};

/// Directory searched for scenario files that are not found as given.
const SCENARIO_DIR_ENV: &str = "ACD_SCENARIO_DIR";

#[derive(Parser)]
#[command(
    name = "acd",
    version,
    about = "Intent-based autonomic cyber defense toolkit",
    propagate_version = true
)]
struct Cli {
    /// Base RNG seed for stochastic subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print progress diagnostics to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base validation and queries.
    Ontology {
        #[command(subcommand)]
        cmd: OntologyCmd,
    },
    /// Candidate-intent derivation.
    Intent {
        #[command(subcommand)]
        cmd: IntentCmd,
    },
    /// Train a tabular Q policy on a scenario.
    Train {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        episodes: u32,
        /// Output path for the policy file.
        #[arg(long, default_value = "policy.json")]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon_start: Option<f64>,
        #[arg(long)]
        epsilon_end: Option<f64>,
        #[arg(long)]
        epsilon_decay: Option<f64>,
        /// Buckets per belief dimension.
        #[arg(long)]
        buckets: Option<usize>,
    },
    /// Evaluate a policy or a named planner over seeded episodes.
    Evaluate {
        #[arg(long)]
        scenario: String,
        /// Policy file produced by `train`.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Named planner (greedy|noop|random|oracle) when no policy is given.
        #[arg(long)]
        planner: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: u32,
    },
    /// Run one episode and emit its trace.
    Run {
        #[arg(long)]
        scenario: String,
        /// Planner: greedy|noop|random|oracle, or `q` with --policy.
        #[arg(long)]
        planner: Option<String>,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Write the JSON-lines trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a trace file; optionally re-run and verify it byte-for-byte.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Re-run the episode from this scenario and compare the bytes.
        #[arg(long)]
        verify: Option<String>,
        /// Policy file, when verifying a tabular-q trace.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum OntologyCmd {
    /// Check a KB file; prints violations and exits non-zero on any.
    Validate { file: PathBuf },
    /// Restriction and equivalence queries.
    Query {
        #[command(subcommand)]
        cmd: QueryCmd,
    },
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Defensive techniques countering an engaged (property, artifact) pair.
    Counters {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        ot: String,
        #[arg(long)]
        property: String,
        #[arg(long)]
        artifact: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Equivalence class of a defensive technique.
    Eqclass {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        dt: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum IntentCmd {
    /// Derive the candidate intent set for an observation file.
    Derive {
        /// KB override; the scenario's KB applies when omitted.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        scenario: String,
        /// JSON file holding an array of alerts.
        #[arg(long)]
        observation: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Jsonl,
    Table,
}

fn main() {
    // Dying quietly on a closed pipe beats a panic when output is piped to
    // `head` and friends.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ontology { cmd } => ontology_cmd(cmd),
        Command::Intent { cmd } => intent_cmd(cmd),
        Command::Train {
            scenario,
            episodes,
            out,
            alpha,
            epsilon_start,
            epsilon_end,
            epsilon_decay,
            buckets,
        } => train_cmd(
            &scenario,
            episodes,
            &out,
            cli.seed,
            cli.verbose,
            alpha,
            epsilon_start,
            epsilon_end,
            epsilon_decay,
            buckets,
        ),
        Command::Evaluate { scenario, policy, planner, episodes } => {
            evaluate_cmd(&scenario, policy.as_deref(), planner.as_deref(), episodes, cli.seed)
        }
        Command::Run { scenario, planner, policy, out } => run_cmd(
            &scenario,
            planner.as_deref(),
            policy.as_deref(),
            out.as_deref(),
            cli.seed,
            cli.verbose,
        ),
        Command::Replay { trace, format, verify, policy } => {
            replay_cmd(&trace, format, verify.as_deref(), policy.as_deref())
        }
    }
}

fn load_kb_file(path: &Path) -> Result<KnowledgeBase> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    load_knowledge_base(&text).map_err(|e| anyhow!("{e}"))
}

fn resolve_scenario(path: &str) -> Result<Scenario> {
    let direct = PathBuf::from(path);
    let resolved = if direct.exists() {
        direct
    } else {
        match std::env::var(SCENARIO_DIR_ENV) {
            Ok(dir) => {
                let fallback = Path::new(&dir).join(path);
                if fallback.exists() {
                    fallback
                } else {
                    direct
                }
            }
            Err(_) => direct,
        }
    };
    load_scenario(&resolved).map_err(|e| anyhow!("{e}"))
}

fn ontology_cmd(cmd: OntologyCmd) -> Result<i32> {
    match cmd {
        OntologyCmd::Validate { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("cannot read `{}`", file.display()))?;
            match load_knowledge_base(&text) {
                Ok(kb) => {
                    let violations = kb.validate();
                    println!("{}", serde_json::to_string(&violations)?);
                    Ok(if violations.is_empty() { 0 } else { 1 })
                }
                Err(err) => {
                    // Loader errors are violations of the same contract;
                    // report them in the machine-readable channel.
                    let report = serde_json::json!([{ "entity": file.display().to_string(), "rule": err.to_string() }]);
                    println!("{report}");
                    Ok(1)
                }
            }
        }
        OntologyCmd::Query { cmd } => query_cmd(cmd),
    }
}

fn query_cmd(cmd: QueryCmd) -> Result<i32> {
    match cmd {
        QueryCmd::Counters { kb, ot, property, artifact, format } => {
            let kb = load_kb_file(&kb)?;
            let technique = kb
                .offensive_techniques
                .get(&ot)
                .ok_or_else(|| anyhow!("unknown offensive technique `{ot}`"))?;
            let counters = kb
                .counter_techniques(technique, &property, &artifact)
                .map_err(|e| anyhow!("{e}"))?;
            let rows: Vec<serde_json::Value> = counters
                .iter()
                .map(|(dt, prop)| serde_json::json!({ "dt": dt.id, "def_property": prop }))
                .collect();
            match format {
                Format::Table => {
                    for (dt, prop) in &counters {
                        println!("{}\t{}", dt.id, prop);
                    }
                }
                _ => println!("{}", serde_json::to_string(&rows)?),
            }
            Ok(0)
        }
        QueryCmd::Eqclass { kb, dt, format } => {
            let kb = load_kb_file(&kb)?;
            let technique = kb
                .defensive_techniques
                .get(&dt)
                .ok_or_else(|| anyhow!("unknown defensive technique `{dt}`"))?;
            let mut ids: Vec<&str> =
                kb.equivalence_class(technique).iter().map(|d| d.id.as_str()).collect();
            ids.sort();
            match format {
                Format::Table => {
                    for id in ids {
                        println!("{id}");
                    }
                }
                _ => println!("{}", serde_json::to_string(&ids)?),
            }
            Ok(0)
        }
    }
}

fn intent_cmd(cmd: IntentCmd) -> Result<i32> {
    match cmd {
        IntentCmd::Derive { kb, scenario, observation } => {
            let scenario = resolve_scenario(&scenario)?;
            let kb = match kb {
                Some(path) => load_kb_file(&path)?,
                None => scenario.kb.clone(),
            };
            let text = std::fs::read_to_string(&observation)
                .with_context(|| format!("cannot read `{}`", observation.display()))?;
            let alerts: Vec<Alert> = serde_json::from_str(&text)
                .context("observation file must hold a JSON array of alerts")?;
            let candidates = derive_candidates(
                &Observation::new(alerts),
                &kb,
                &scenario.mapper_rules,
                &scenario.exclusion_list(),
            )
            .map_err(|e| anyhow!("{e}"))?;
            let sorted: Vec<_> = candidates.into_iter().collect();
            println!("{}", serde_json::to_string(&sorted)?);
            Ok(0)
        }
    }
}

fn merged_hyperparams(
    scenario: &Scenario,
    seed: u64,
    alpha: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    epsilon_decay: Option<f64>,
    buckets: Option<usize>,
) -> QHyperparams {
    let mut hp = scenario.planner.q.clone();
    hp.gamma = scenario.gamma;
    hp.seed = seed;
    if let Some(v) = alpha {
        hp.alpha = v;
    }
    if let Some(v) = epsilon_start {
        hp.epsilon_start = v;
    }
    if let Some(v) = epsilon_end {
        hp.epsilon_end = v;
    }
    if let Some(v) = epsilon_decay {
        hp.epsilon_decay = v;
    }
    if let Some(v) = buckets {
        hp.belief_buckets = v;
    }
    hp
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    scenario: &str,
    episodes: u32,
    out: &Path,
    seed: u64,
    verbose: bool,
    alpha: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    epsilon_decay: Option<f64>,
    buckets: Option<usize>,
) -> Result<i32> {
    let scenario = resolve_scenario(scenario)?;
    let hp = merged_hyperparams(
        &scenario,
        seed,
        alpha,
        epsilon_start,
        epsilon_end,
        epsilon_decay,
        buckets,
    );
    if verbose {
        eprintln!("training {episodes} episodes on `{}` (seed {seed})", scenario.name);
    }
    let mut env = SimEnv::new(scenario).map_err(|e| anyhow!("{e}"))?;
    let policy = q_learning_train(&mut env, episodes, &hp).map_err(|e| anyhow!("{e}"))?;
    let entries: usize = policy.q.values().map(|row| row.len()).sum();
    std::fs::write(out, policy.to_json())
        .with_context(|| format!("cannot write `{}`", out.display()))?;
    println!(
        "{}",
        serde_json::json!({
            "episodes": episodes,
            "seed": seed,
            "table_entries": entries,
            "out": out.display().to_string(),
        })
    );
    Ok(0)
}

fn make_planner(
    name: &str,
    scenario: &Scenario,
    policy: Option<&Path>,
    seed: u64,
) -> Result<Box<dyn Planner>> {
    match name {
        "greedy" => Ok(Box::new(GreedyMyopic)),
        "noop" => Ok(Box::new(NoOpPolicy)),
        "random" => Ok(Box::new(RandomPolicy::seeded(seed))),
        "oracle" => Ok(Box::new(OracleScripted::new(scenario.planner.oracle_priority.clone()))),
        "q" | "tabular-q" => {
            let path = policy.ok_or_else(|| anyhow!("planner `{name}` needs --policy"))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read `{}`", path.display()))?;
            Ok(Box::new(TabularQ::from_json(&text).map_err(|e| anyhow!("{e}"))?))
        }
        other => bail!("unknown planner `{other}` (expected greedy|noop|random|oracle|q)"),
    }
}

fn evaluate_cmd(
    scenario: &str,
    policy: Option<&Path>,
    planner: Option<&str>,
    episodes: u32,
    seed: u64,
) -> Result<i32> {
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let scenario = resolve_scenario(scenario)?;
    let name = match (policy, planner) {
        (Some(_), None) => "q",
        (None, Some(p)) => p,
        (None, None) => scenario.planner.default.as_str(),
        (Some(_), Some(_)) => bail!("give either --policy or --planner, not both"),
    };
    let mut planner = make_planner(name, &scenario, policy, seed)?;
    let mut env = SimEnv::new(scenario).map_err(|e| anyhow!("{e}"))?;
    let metrics = evaluate_policy(planner.as_mut(), &mut env, episodes, seed);
    println!(
        "{}",
        serde_json::json!({
            "planner": planner.name(),
            "episodes": metrics.episodes,
            "seed": seed,
            "mean_return": metrics.mean_return,
            "mitigation_rate": metrics.mitigation_rate,
            "mean_time_to_mitigation": metrics.mean_time_to_mitigation,
        })
    );
    Ok(0)
}

fn run_cmd(
    scenario: &str,
    planner: Option<&str>,
    policy: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
    verbose: bool,
) -> Result<i32> {
    let scenario = resolve_scenario(scenario)?;
    let name = planner.unwrap_or(scenario.planner.default.as_str());
    let mut planner = make_planner(name, &scenario, policy, seed)?;
    let trace = run_episode(&scenario, planner.as_mut(), seed).map_err(|e| anyhow!("{e}"))?;
    let text = trace.to_jsonl();
    match out {
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("cannot write `{}`", path.display()))?;
            if verbose {
                eprintln!("trace written to `{}`", path.display());
            }
        }
        None => print!("{text}"),
    }
    if verbose {
        eprintln!(
            "mitigated: {}, rounds: {}, return: {:.3}",
            trace.metrics.mitigation_success, trace.metrics.rounds, trace.metrics.total_return
        );
    }
    Ok(0)
}

fn short_action(action: &acd_core::decision::DefenderAction) -> String {
    use acd_core::decision::DefenderAction::*;
    match action {
        NoOp => "noop".to_string(),
        ExecuteTransient(i) => format!("transient({})", i.dt),
        InsertPersistent(i) => format!("insert({})", i.dt),
        ModifyPersistent { old, new } => format!("modify({} -> {})", old.dt, new.dt),
    }
}

fn replay_cmd(
    trace_path: &Path,
    format: Format,
    verify: Option<&str>,
    policy: Option<&Path>,
) -> Result<i32> {
    let text = std::fs::read_to_string(trace_path)
        .with_context(|| format!("cannot read `{}`", trace_path.display()))?;
    let trace = EpisodeTrace::from_jsonl(&text).map_err(|e| anyhow!("{e}"))?;

    if let Some(scenario) = verify {
        let scenario = resolve_scenario(scenario)?;
        if scenario.name != trace.scenario {
            bail!("trace was recorded on `{}`, not `{}`", trace.scenario, scenario.name);
        }
        let mut planner = make_planner(&trace.planner, &scenario, policy, trace.seed)?;
        let rerun =
            run_episode(&scenario, planner.as_mut(), trace.seed).map_err(|e| anyhow!("{e}"))?;
        if rerun.to_jsonl() == text {
            println!("{}", serde_json::json!({ "verified": true, "rounds": trace.metrics.rounds }));
            return Ok(0);
        }
        println!("{}", serde_json::json!({ "verified": false }));
        return Ok(1);
    }

    match format {
        Format::Table => {
            println!("round\tobs\taction\treward\tattack\tdrift");
            for r in &trace.rounds {
                let drifts = r
                    .assurance
                    .statuses
                    .iter()
                    .filter(|s| {
                        matches!(s.status, acd_core::enforcement::EnforcementStatus::Drifted { .. })
                    })
                    .count();
                println!(
                    "{}\t{}\t{}\t{:.3}\t{}\t{}",
                    r.round,
                    r.observation_label,
                    short_action(&r.action),
                    r.reward,
                    r.infra.attack_active,
                    drifts
                );
            }
            println!(
                "mitigated: {}, time_to_mitigation: {:?}, return: {:.3}",
                trace.metrics.mitigation_success,
                trace.metrics.time_to_mitigation,
                trace.metrics.total_return
            );
        }
        Format::Json => println!("{}", serde_json::to_string(&trace)?),
        Format::Jsonl => print!("{}", trace.to_jsonl()),
    }
    // Sanity: candidate sets in a trace are sorted and duplicate-free.
    for r in &trace.rounds {
        let set: BTreeSet<_> = r.candidates.iter().collect();
        if set.len() != r.candidates.len() {
            bail!("trace round {} has duplicate candidates", r.round);
        }
    }
    Ok(0)
}
