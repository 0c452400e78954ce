//! Discrete-round simulation substrate: the infrastructure model, the
//! scripted stochastic attacker, the noisy detector, scenario configuration,
//! and the episode runner with trace and metrics output.

pub mod attacker;
pub mod detector;
pub mod episode;
pub mod infra;
pub mod scenario;

pub use attacker::{attacker_step, AttackerRuntime, AttackerScript};
pub use detector::{detector_emit, observation_label, DetectorEntry};
pub use episode::{
    compute_metrics, run_episode, EpisodeMetrics, EpisodeTrace, RoundRecord, SimEnv,
};
pub use infra::{InfraSummary, InfrastructureState};
pub use scenario::{load_scenario, Scenario, ScenarioError};
