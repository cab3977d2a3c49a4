//! Environment wrapper pairing the simulator with the reward engine.

use crate::error::Result;
use crate::reward::{self, PedestrianPredictor, PredictorKind, RewardConfig};
use crate::sim::{Observation, ProximityReport, WorldConfig, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    /// Per-robot rewards; zero for robots retired before the step.
    pub rewards: Vec<f64>,
    pub team_reward: f64,
    /// Lookahead terms that entered `rewards`.
    pub k_step_terms: Vec<f64>,
    /// Robots still in the scene after the step.
    pub active: Vec<bool>,
    pub reached_goal: Vec<bool>,
    pub reached_goal_now: Vec<bool>,
    /// Robots in collision after the step.
    pub collided: Vec<bool>,
    pub comfort_intrusion: Vec<bool>,
    pub collision: bool,
    pub timeout: bool,
    pub done: bool,
    pub proximity: Vec<Option<ProximityReport>>,
}

pub struct CrowdEnv {
    config: WorldConfig,
    reward: RewardConfig,
    predictor: Box<dyn PedestrianPredictor>,
    world: WorldState,
}

impl CrowdEnv {
    pub fn new(config: WorldConfig, reward: RewardConfig, predictor: PredictorKind) -> Result<Self> {
        reward.validate()?;
        let world = WorldState::reset(&config, config.seed)?;
        Ok(Self {
            config,
            reward,
            predictor: reward::predictor_for(predictor),
            world,
        })
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        self.world = WorldState::reset(&self.config, seed)?;
        Ok(self.observations())
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn set_reward_config(&mut self, reward: RewardConfig) -> Result<()> {
        reward.validate()?;
        self.reward = reward;
        Ok(())
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.world.n_robots()).map(|i| self.world.sense(i)).collect()
    }

    fn lookahead_terms(&self, actions: &[[f64; 2]]) -> Result<Vec<f64>> {
        let n = self.world.n_robots();
        if !self.reward.k_step_enabled {
            return Ok(vec![0.0; n]);
        }
        let all_ids: Vec<usize> = self.world.pedestrians.iter().map(|p| p.id).collect();
        let all = self.predictor.predict(&self.world, &all_ids, self.reward.lookahead_steps);
        (0..n)
            .map(|i| {
                let robot = &self.world.robots[i];
                if !robot.active {
                    return Ok(0.0);
                }
                let in_view = self.world.collision_check(i);
                let mut visible = all.clone();
                visible
                    .tracks
                    .retain(|t| in_view.d_rp.iter().any(|&(id, _)| id == t.pedestrian_id));
                reward::k_step_reward(&robot.state, actions[i], &visible, &self.reward)
            })
            .collect()
    }

    pub fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepResult> {
        self.world.check_actions(actions)?;
        let k_step_terms = self.lookahead_terms(actions)?;
        let outcome = self.world.advance(actions)?;
        let rewards: Vec<f64> = outcome
            .proximity
            .iter()
            .enumerate()
            .map(|(i, prox)| match prox {
                Some(p) => reward::basic_reward_from(&self.world.robots[i].state, p, k_step_terms[i], &self.reward),
                None => 0.0,
            })
            .collect();
        let collided = outcome
            .proximity
            .iter()
            .map(|p| p.as_ref().is_some_and(ProximityReport::collision))
            .collect();
        let comfort_intrusion = outcome
            .proximity
            .iter()
            .map(|p| p.as_ref().is_some_and(|p| p.comfort_intrusion))
            .collect();
        Ok(StepResult {
            observations: self.observations(),
            team_reward: reward::joint_reward(&rewards),
            rewards,
            k_step_terms,
            active: self.world.robots.iter().map(|r| r.active).collect(),
            reached_goal: self.world.robots.iter().map(|r| r.reached_goal).collect(),
            reached_goal_now: outcome.reached_goal_now,
            collided,
            comfort_intrusion,
            collision: outcome.collision,
            timeout: outcome.timeout,
            done: outcome.done,
            proximity: outcome.proximity,
        })
    }
}
