//! Experiment configuration: every module's settings in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::OrcaConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::harness::{EvaluationConfig, PolicyKind, TrainingConfig};
use crate::learner::LearnerConfig;
use crate::replay::ReplayConfig;
use crate::reward::RewardSchedule;
use crate::sim::WorldConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub world: WorldConfig,
    pub reward: RewardSchedule,
    pub encoder: EncoderConfig,
    pub learner: LearnerConfig,
    pub replay: ReplayConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub orca: OrcaConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            match unknown_key(&message) {
                Some(field) => {
                    let section = e.span().and_then(|span| enclosing_table(text, span.start));
                    let key = match section {
                        Some(t) => format!("{t}.{field}"),
                        None => field,
                    };
                    Error::ConfigKey { key, message }
                }
                None => Error::Config(e.to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.reward.validate()?;
        self.encoder.validate()?;
        self.learner.validate()?;
        self.replay.validate()?;
        self.training.validate()?;
        self.evaluation.validate()?;
        self.orca.validate()?;
        if self.replay.capacity < self.learner.batch_size {
            return Err(Error::ConfigKey {
                key: "replay.capacity".into(),
                message: "must hold at least one batch".into(),
            });
        }
        Ok(())
    }

    /// The reward schedule actually used for training: `msa3c_pred` turns
    /// the lookahead term on, `msa3c` turns it off.
    pub fn effective_reward(&self) -> RewardSchedule {
        let mut r = self.reward.clone();
        match self.policy {
            PolicyKind::Msa3c => r.k_step = false,
            PolicyKind::Msa3cPred => r.k_step = true,
            _ => {}
        }
        r
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON rendering.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let canonical = serde_json::to_string(&value).expect("json value serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Pulls the offending key out of serde's "unknown field `x`" message.
fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Name of the last `[table]` header before byte offset `pos`.
fn enclosing_table(text: &str, pos: usize) -> Option<String> {
    text[..pos.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("[world]\nn_pedestrainz = 4\n").unwrap_err();
        match err {
            Error::ConfigKey { key, .. } => assert_eq!(key, "world.n_pedestrainz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_its_key() {
        let err = ExperimentConfig::from_toml_str("[learner]\ntau = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "learner.tau"));
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.world.n_pedestrians = 20;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
