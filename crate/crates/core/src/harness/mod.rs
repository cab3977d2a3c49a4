//! Experiment orchestration: episode rollouts, seeded evaluation batteries,
//! metrics, trajectory logs, plots and the staged training loop.

mod logs;
mod metrics;
mod plot;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::CollisionMode;

pub use logs::{parse_logs, read_logs, write_logs, EpisodeHeader, EpisodeLog, LogLine};
pub use metrics::{compute_metrics, MetricsReport};
pub use plot::{emit_plots, plot_episode};
pub use rollout::{evaluation_seed, run_episode, run_evaluation, Agent, EpisodeOutcome, EvaluationOutput};
pub use train::{run_training, training_seed, EpisodeStats, TrainingState, TrainingSummary};

/// Which controller drives the robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Learned policy trained without the lookahead reward term.
    Msa3c,
    /// Learned policy trained with the lookahead reward term in stage II.
    #[default]
    Msa3cPred,
    /// ORCA with perfect sensing of positions and velocities.
    Orca,
    /// Robots follow the social-force law.
    Sf,
    /// Uniform random commands.
    Random,
}

impl PolicyKind {
    pub fn is_learned(self) -> bool {
        matches!(self, Self::Msa3c | Self::Msa3cPred)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Msa3c => "msa3c",
            Self::Msa3cPred => "msa3c_pred",
            Self::Orca => "orca",
            Self::Sf => "sf",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Episodes of uniform random exploration before the policy acts.
    pub warmup_episodes: usize,
    pub updates_per_episode: usize,
    pub seed: u64,
    /// 0 disables checkpoints.
    pub checkpoint_every: usize,
    /// 0 disables periodic evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub collision_mode: CollisionMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 50_000,
            warmup_episodes: 100,
            updates_per_episode: 20,
            seed: 0,
            checkpoint_every: 1_000,
            eval_every: 1_000,
            eval_episodes: 100,
            collision_mode: CollisionMode::Continue,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::ConfigKey {
                key: "training.episodes".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::ConfigKey {
                key: "training.eval_episodes".into(),
                message: "must be >= 1 when periodic evaluation is on".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub episodes: usize,
    /// Episode `k` of every battery uses world seed `seed + k`.
    pub seed: u64,
    pub collision_mode: CollisionMode,
    /// Learned policies act with the mean action.
    pub deterministic: bool,
    pub keep_logs: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            seed: 1_000_000,
            collision_mode: CollisionMode::Terminate,
            deterministic: true,
            keep_logs: true,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::ConfigKey {
                key: "evaluation.episodes".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}
