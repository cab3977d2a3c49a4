//! Staged training loop with periodic evaluation and resumable checkpoints.
//!
//! Output directory layout:
//! - `training.ndjson`: one [`EpisodeStats`] line per episode
//! - `evaluations.ndjson`: one `{episode, report}` line per snapshot
//! - `checkpoint/`: learner, replay buffer and loop state of the last save
//! - `learner.safetensors`: the final learner

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::rollout::{run_episode, run_evaluation, Agent};
use crate::config::ExperimentConfig;
use crate::env::CrowdEnv;
use crate::error::{Error, Result};
use crate::learner::{ActionMode, Msa3c};
use crate::replay::ReplayBuffer;
use crate::reward::Stage;

const STREAM_EPISODE_SEEDS: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub stage: u8,
    pub seed: u64,
    pub team_return: f64,
    pub steps: usize,
    pub success: bool,
    pub collision: bool,
    /// Mean over this episode's learner updates.
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: f64,
    pub updates: u64,
    pub buffer_segments: usize,
}

/// Loop position saved next to the learner and buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub next_episode: usize,
    /// Fingerprint of the config with the episode budget blanked, so a run
    /// may be resumed with a larger budget.
    pub resume_fingerprint: String,
}

#[derive(Debug)]
pub struct TrainingSummary {
    pub learner: Msa3c,
    /// Statistics of every episode, including those before a resume.
    pub stats: Vec<EpisodeStats>,
    pub evaluations: Vec<(usize, MetricsReport)>,
}

#[derive(Serialize, Deserialize)]
struct EvaluationLine {
    episode: usize,
    report: MetricsReport,
}

fn resume_fingerprint(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.training.episodes = 0;
    c.fingerprint()
}

/// World seed of training episode `k`.
pub fn training_seed(base: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(STREAM_EPISODE_SEEDS + k as u64);
    rng.next_u64()
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(k, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_ndjson<T: Serialize>(w: &mut impl Write, path: &Path, item: &T) -> Result<()> {
    let s = serde_json::to_string(item).map_err(|e| Error::contract(e.to_string()))?;
    writeln!(w, "{s}").map_err(|e| Error::io(path, e))
}

fn save_checkpoint(dir: &Path, learner: &Msa3c, buffer: &ReplayBuffer, state: &TrainingState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    learner.save(&dir.join("learner.safetensors"))?;
    buffer.save(&dir.join("replay.safetensors"))?;
    let path = dir.join("state.json");
    let s = serde_json::to_string_pretty(state).map_err(|e| Error::contract(e.to_string()))?;
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

/// Trains the configured learned policy. With `resume`, continues from the
/// checkpoint in `out_dir` when there is one; the continued run matches an
/// uninterrupted one bit for bit. `on_episode` sees every new episode.
pub fn run_training(
    config: &ExperimentConfig,
    out_dir: &Path,
    resume: bool,
    mut on_episode: impl FnMut(&EpisodeStats),
) -> Result<TrainingSummary> {
    config.validate()?;
    if !config.policy.is_learned() {
        return Err(Error::ConfigKey {
            key: "policy".into(),
            message: format!("`{}` is not a trainable policy", config.policy.name()),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ck_dir = out_dir.join("checkpoint");
    let stats_path = out_dir.join("training.ndjson");
    let evals_path = out_dir.join("evaluations.ndjson");
    let fingerprint = resume_fingerprint(config);

    let n_robots = config.world.n_robots;
    let state_path = ck_dir.join("state.json");
    let (mut learner, mut buffer, start) = if resume && state_path.exists() {
        let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: TrainingState =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("training state: {e}")))?;
        if state.resume_fingerprint != fingerprint {
            return Err(Error::Checkpoint(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        let learner = Msa3c::load(&ck_dir.join("learner.safetensors"))?;
        let buffer = ReplayBuffer::load(&ck_dir.join("replay.safetensors"))?;
        (learner, buffer, state.next_episode)
    } else {
        let learner = Msa3c::new(&config.encoder, &config.learner, n_robots, config.training.seed)?;
        (learner, ReplayBuffer::new(&config.replay), 0)
    };

    // Keep only history that precedes the restart point.
    let mut stats: Vec<EpisodeStats> = read_ndjson(&stats_path)?;
    stats.retain(|s| s.episode < start);
    let mut evaluations: Vec<(usize, MetricsReport)> = read_ndjson::<EvaluationLine>(&evals_path)?
        .into_iter()
        .filter(|e| e.episode < start)
        .map(|e| (e.episode, e.report))
        .collect();
    let mut stats_out = BufWriter::new(File::create(&stats_path).map_err(|e| Error::io(&stats_path, e))?);
    for s in &stats {
        write_ndjson(&mut stats_out, &stats_path, s)?;
    }
    {
        let mut w = BufWriter::new(File::create(&evals_path).map_err(|e| Error::io(&evals_path, e))?);
        for (episode, report) in &evaluations {
            write_ndjson(
                &mut w,
                &evals_path,
                &EvaluationLine {
                    episode: *episode,
                    report: report.clone(),
                },
            )?;
        }
        w.flush().map_err(|e| Error::io(&evals_path, e))?;
    }

    let tc = &config.training;
    let mut world = config.world.clone();
    world.collision_mode = tc.collision_mode;
    let schedule = config.effective_reward();
    let mut env = CrowdEnv::new(world.clone(), schedule.config_for(start, &world), schedule.predictor)?;
    let policy_name = config.policy.name();
    let config_fp = config.fingerprint();

    for ep in start..tc.episodes {
        let reward = schedule.config_for(ep, &world);
        let stage = reward.stage;
        env.set_reward_config(reward)?;
        let agent = if ep < tc.warmup_episodes {
            Agent::Exploring(&learner)
        } else {
            Agent::Learned {
                learner: &learner,
                mode: ActionMode::Stochastic,
            }
        };
        let seed = training_seed(tc.seed, ep);
        let out = run_episode(
            &mut env,
            agent,
            ep,
            seed,
            Some(config.replay.segment_len),
            policy_name,
            &config_fp,
        )?;
        let traj = out.trajectory.as_ref().expect("collection was requested");
        buffer.push_episode(traj)?;

        let (mut closs, mut ploss, mut n_c, mut n_p) = (0.0, 0.0, 0usize, 0usize);
        if ep + 1 >= tc.warmup_episodes && buffer.len() >= config.learner.batch_size {
            for _ in 0..tc.updates_per_episode {
                let m = learner.train_step(&buffer)?;
                closs += m.critic_loss;
                n_c += 1;
                if let Some(p) = m.policy_loss {
                    ploss += p;
                    n_p += 1;
                }
            }
        }
        let s = EpisodeStats {
            episode: ep,
            stage: match stage {
                Stage::One => 1,
                Stage::Two => 2,
            },
            seed,
            team_return: out.team_return,
            steps: out.steps,
            success: out.success,
            collision: out.collision,
            critic_loss: (n_c > 0).then(|| closs / n_c as f64),
            policy_loss: (n_p > 0).then(|| ploss / n_p as f64),
            alpha: learner.alpha()?,
            updates: learner.updates,
            buffer_segments: buffer.len(),
        };
        write_ndjson(&mut stats_out, &stats_path, &s)?;
        on_episode(&s);
        stats.push(s);

        let done = ep + 1;
        if tc.eval_every > 0 && done % tc.eval_every == 0 {
            let agent = Agent::Learned {
                learner: &learner,
                mode: if config.evaluation.deterministic {
                    ActionMode::Deterministic
                } else {
                    ActionMode::Stochastic
                },
            };
            let mut eval_cfg = config.clone();
            eval_cfg.evaluation.keep_logs = false;
            let report = run_evaluation(&eval_cfg, agent, policy_name, tc.eval_episodes)?.report;
            let mut w = OpenOptions::new()
                .append(true)
                .open(&evals_path)
                .map_err(|e| Error::io(&evals_path, e))?;
            write_ndjson(
                &mut w,
                &evals_path,
                &EvaluationLine {
                    episode: ep,
                    report: report.clone(),
                },
            )?;
            evaluations.push((ep, report));
        }
        if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
            stats_out.flush().map_err(|e| Error::io(&stats_path, e))?;
            let state = TrainingState {
                next_episode: done,
                resume_fingerprint: fingerprint.clone(),
            };
            save_checkpoint(&ck_dir, &learner, &buffer, &state)?;
        }
    }
    stats_out.flush().map_err(|e| Error::io(&stats_path, e))?;
    let end = tc.episodes.max(start);
    if tc.checkpoint_every > 0 && end % tc.checkpoint_every != 0 {
        let state = TrainingState {
            next_episode: end,
            resume_fingerprint: fingerprint,
        };
        save_checkpoint(&ck_dir, &learner, &buffer, &state)?;
    }
    learner.save(&out_dir.join("learner.safetensors"))?;
    Ok(TrainingSummary {
        learner,
        stats,
        evaluations,
    })
}
