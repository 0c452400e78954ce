//! Intent-based autonomic cyber defense.
//!
//! The crate wires five subsystems into one post-detection response loop:
//!
//! - [`ontology`] — knowledge base of offensive/defensive techniques, digital
//!   artifacts, and the property restrictions linking them.
//! - [`intent`] — turns alerts into instantiated artifacts and derives the
//!   candidate security-intent set.
//! - [`decision`] — the discovery agent: belief tracking over a compact
//!   POMDP abstraction, the persistent intent store with TTLs, and planners
//!   (greedy, tabular Q-learning, scripted baselines).
//! - [`enforcement`] — the enforcement agent: security-function registry,
//!   intent-to-configuration translation, enforcement, and drift assurance.
//! - [`simulation`] — a deterministic round-based environment with a scripted
//!   stochastic attacker, a noisy detector, and trace/metrics output.

pub mod decision;
pub mod enforcement;
pub mod intent;
pub mod ontology;
pub mod simulation;
