//! Episode rollouts for every controller and seeded evaluation batteries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::logs::{EpisodeHeader, EpisodeLog};
use super::metrics::{compute_metrics, MetricsReport};
use crate::baselines::{self, OrcaConfig};
use crate::config::ExperimentConfig;
use crate::encoder::{raw_step, RawStep};
use crate::env::CrowdEnv;
use crate::error::{Error, Result};
use crate::learner::{ActionMode, Msa3c};
use crate::replay::{EpisodeTrajectory, Transition};
use crate::sim::social_force::SocialForceParams;
use crate::sim::{CollisionMode, Observation};

const STREAM_ACTIONS: u64 = 1 << 40;

/// Controller for all robots of an episode.
#[derive(Clone, Copy)]
pub enum Agent<'a> {
    Orca(&'a OrcaConfig),
    SocialForce(&'a SocialForceParams),
    Random,
    Learned { learner: &'a Msa3c, mode: ActionMode },
    /// Uniform random commands while the learner's encoder tracks its
    /// recurrent state, so the collected experience is trainable.
    Exploring(&'a Msa3c),
}

impl Agent<'_> {
    fn learner(&self) -> Option<&Msa3c> {
        match self {
            Agent::Learned { learner, .. } | Agent::Exploring(learner) => Some(learner),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub log: EpisodeLog,
    /// Training experience, when collection was requested.
    pub trajectory: Option<EpisodeTrajectory>,
    /// Undiscounted reward sum per robot.
    pub returns: Vec<f64>,
    pub team_return: f64,
    pub steps: usize,
    pub success: bool,
    pub collision: bool,
}

fn raw_steps(obs: &[Observation], prev: &[Option<[f64; 2]>]) -> Vec<RawStep> {
    obs.iter().enumerate().map(|(i, o)| raw_step(o, i, prev[i])).collect()
}

/// Runs one episode from world seed `seed`. With `collect = Some(L)` the
/// experience is gathered into an [`EpisodeTrajectory`] of segment length
/// `L`; collection needs a learned or exploring agent.
pub fn run_episode(
    env: &mut CrowdEnv,
    agent: Agent<'_>,
    episode: usize,
    seed: u64,
    collect: Option<usize>,
    policy_name: &str,
    fingerprint: &str,
) -> Result<EpisodeOutcome> {
    let learner = agent.learner();
    if collect.is_some() && learner.is_none() {
        return Err(Error::contract("experience collection needs a learned agent"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ACTIONS);

    let mut obs = env.reset(seed)?;
    let n = env.world().n_robots();
    let header = EpisodeHeader::for_world(env.world(), episode, seed, policy_name, fingerprint);
    let mut records = env.world().trajectory_records();
    let capacity = Msa3c::execution_capacity(env.config().n_agents());
    let mut hidden = learner.map(|l| l.initial_hidden(n, capacity)).transpose()?;
    let mut traj = collect.map(|len| EpisodeTrajectory::new(n, len, episode as u64));
    let mut prev: Vec<Option<[f64; 2]>> = vec![None; n];
    let mut returns = vec![0.0; n];
    let mut team_return = 0.0;
    let mut any_collision = false;
    let terminate_on_collision = env.config().collision_mode == CollisionMode::Terminate;

    loop {
        let world = env.world();
        let active: Vec<bool> = world.robots.iter().map(|r| r.active).collect();
        let steps = raw_steps(&obs, &prev);
        let hidden_before = match (&traj, &hidden) {
            (Some(t), Some(h)) if t.needs_hidden() => Some(h.to_stored()?),
            _ => None,
        };
        let mut actions: Vec<[f64; 2]> = match agent {
            Agent::Orca(cfg) => (0..n)
                .map(|i| baselines::velocity_to_action(baselines::orca_step(i, world, cfg), world.robots[i].state.v_pref))
                .collect(),
            Agent::SocialForce(params) => (0..n)
                .map(|i| {
                    baselines::velocity_to_action(baselines::sf_robot_step(i, world, params), world.robots[i].state.v_pref)
                })
                .collect(),
            Agent::Random => (0..n)
                .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                .collect(),
            Agent::Learned { learner, mode } => {
                let h = hidden.as_ref().expect("learned agents carry hidden state");
                let (a, h_next) = learner.act(&steps, h, capacity, mode, &mut rng)?;
                hidden = Some(h_next);
                a
            }
            Agent::Exploring(learner) => {
                let h = hidden.as_ref().expect("learned agents carry hidden state");
                let (_, h_next) = learner.act(&steps, h, capacity, ActionMode::Deterministic, &mut rng)?;
                hidden = Some(h_next);
                (0..n)
                    .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                    .collect()
            }
        };
        for (a, &on) in actions.iter_mut().zip(&active) {
            if !on {
                *a = [0.0, 0.0];
            }
        }
        for (i, p) in prev.iter_mut().enumerate() {
            *p = Some([obs[i].ego[0], obs[i].ego[1]]);
        }

        let res = env.step(&actions)?;
        records.extend(env.world().trajectory_records());
        for (r, x) in returns.iter_mut().zip(&res.rewards) {
            *r += x;
        }
        team_return += res.team_reward;
        any_collision |= res.collision;
        if let Some(t) = traj.as_mut() {
            let terminal = (0..n)
                .map(|i| active[i] && (res.reached_goal_now[i] || (res.collision && terminate_on_collision)))
                .collect();
            t.push(
                Transition {
                    steps,
                    actions: actions.clone(),
                    rewards: res.rewards.clone(),
                    active: active.clone(),
                    terminal,
                },
                hidden_before,
            )?;
        }
        obs = res.observations;
        if res.done {
            if let Some(t) = traj.as_mut() {
                t.finish(raw_steps(&obs, &prev), res.active.clone())?;
            }
            let success = res.reached_goal.iter().all(|&r| r);
            return Ok(EpisodeOutcome {
                log: EpisodeLog { header, records },
                trajectory: traj,
                returns,
                team_return,
                steps: env.world().clock,
                success,
                collision: any_collision,
            });
        }
    }
}

/// World seed of episode `k` in a battery. Independent of the policy, so
/// every controller faces the same pedestrian realisations.
pub fn evaluation_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add(k as u64)
}

#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub report: MetricsReport,
    /// Per-episode logs in episode order; empty unless logs are kept.
    pub logs: Vec<EpisodeLog>,
    pub team_returns: Vec<f64>,
}

/// Runs `episodes` seeded episodes in parallel; results are reduced in
/// episode order, so the report does not depend on scheduling.
pub fn run_evaluation(
    config: &ExperimentConfig,
    agent: Agent<'_>,
    policy_name: &str,
    episodes: usize,
) -> Result<EvaluationOutput> {
    let mut world = config.world.clone();
    world.collision_mode = config.evaluation.collision_mode;
    let schedule = config.effective_reward();
    let reward = schedule.config_for(config.training.episodes, &world);
    let fingerprint = config.fingerprint();
    let outcomes: Vec<EpisodeOutcome> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut env = CrowdEnv::new(world.clone(), reward.clone(), schedule.predictor)?;
            let seed = evaluation_seed(config.evaluation.seed, k);
            run_episode(&mut env, agent, k, seed, None, policy_name, &fingerprint)
        })
        .collect::<Result<_>>()?;
    let team_returns = outcomes.iter().map(|o| o.team_return).collect();
    let logs: Vec<EpisodeLog> = outcomes.into_iter().map(|o| o.log).collect();
    let report = compute_metrics(&logs);
    Ok(EvaluationOutput {
        report,
        logs: if config.evaluation.keep_logs { logs } else { Vec::new() },
        team_returns,
    })
}
