//! Multi-robot social-aware cooperative navigation.
//!
//! The crate bundles a seedable pedestrian-crowd simulator ([`sim`]), the
//! reward terms used to train robots in it ([`reward`]), a temporal-spatial
//! graph social encoder ([`encoder`]), a rollout replay buffer ([`replay`]),
//! an attention-critic multi-agent soft actor-critic learner ([`learner`]),
//! classical ORCA and social-force baselines ([`baselines`]) and an
//! evaluation harness with metrics, trajectory logs and plots ([`harness`]).
//!
//! Runnable walkthroughs of every capability live in the crate's `examples/`
//! directory; `cargo run --example <name>` runs one.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod replay;
pub mod reward;
pub mod sim;

/// Planar vector in metres or metres per second.
pub type Vec2 = nalgebra::Vector2<f64>;

pub use config::ExperimentConfig;
pub use env::{CrowdEnv, StepResult};
pub use error::{Error, Result};
pub use sim::{AgentKind, Observation, WorldConfig, WorldState};
