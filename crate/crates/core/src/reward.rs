//! Per-robot rewards: goal distance, time and comfort terms, collision
//! penalty, and a K-step lookahead comfort penalty computed against
//! forecast pedestrian positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AgentState, ProximityReport, WorldConfig, WorldState};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Efficiency stage: mild collision penalty, no lookahead term.
    One,
    /// Social stage: harsh collision penalty, lookahead term when enabled.
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    ConstantVelocity,
    OracleSocialForce,
}

/// Reward constants in force for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub collision_penalty: f64,
    pub r_time: f64,
    /// Magnitude of the comfort-intrusion penalty (applied negatively).
    pub comfort_penalty: f64,
    pub d_comfort: f64,
    pub lookahead_steps: usize,
    /// `1 / R_env^2`.
    pub f_scale: f64,
    pub dt: f64,
    pub stage: Stage,
    pub k_step_enabled: bool,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead_steps == 0 {
            return Err(Error::contract("lookahead_steps must be >= 1"));
        }
        if !(self.f_scale > 0.0) {
            return Err(Error::contract("f_scale must be > 0"));
        }
        if !(self.collision_penalty < 0.0) {
            return Err(Error::contract("collision_penalty must be < 0"));
        }
        Ok(())
    }
}

/// Two-stage reward schedule as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSchedule {
    pub stage1_collision_penalty: f64,
    pub stage2_collision_penalty: f64,
    pub r_time: f64,
    pub comfort_penalty: f64,
    pub lookahead_steps: usize,
    /// Whether stage II adds the K-step lookahead term.
    pub k_step: bool,
    pub stage2_start_episode: usize,
    pub predictor: PredictorKind,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        Self {
            stage1_collision_penalty: -1.0,
            stage2_collision_penalty: -5.0,
            r_time: -0.001,
            comfort_penalty: 0.5,
            lookahead_steps: 5,
            k_step: true,
            stage2_start_episode: 25_000,
            predictor: PredictorKind::ConstantVelocity,
        }
    }
}

impl RewardSchedule {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, m: &str| Error::ConfigKey {
            key: format!("reward.{key}"),
            message: m.into(),
        };
        if !(self.stage1_collision_penalty < 0.0) {
            return Err(err("stage1_collision_penalty", "must be < 0"));
        }
        if !(self.stage2_collision_penalty < 0.0) {
            return Err(err("stage2_collision_penalty", "must be < 0"));
        }
        if self.lookahead_steps == 0 {
            return Err(err("lookahead_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn stage_for(&self, episode: usize) -> Stage {
        if episode >= self.stage2_start_episode {
            Stage::Two
        } else {
            Stage::One
        }
    }

    pub fn config_for(&self, episode: usize, world: &WorldConfig) -> RewardConfig {
        let stage = self.stage_for(episode);
        RewardConfig {
            collision_penalty: match stage {
                Stage::One => self.stage1_collision_penalty,
                Stage::Two => self.stage2_collision_penalty,
            },
            r_time: self.r_time,
            comfort_penalty: self.comfort_penalty,
            d_comfort: world.d_comfort,
            lookahead_steps: self.lookahead_steps,
            f_scale: 1.0 / (world.scenario_radius * world.scenario_radius),
            dt: world.dt,
            stage,
            k_step_enabled: self.k_step && stage == Stage::Two,
        }
    }
}

/// Forecast positions of one pedestrian over the lookahead horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrack {
    pub pedestrian_id: usize,
    pub radius: f64,
    /// Positions at `t+1 ..= t+K`.
    pub positions: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectories {
    pub horizon: usize,
    pub tracks: Vec<PredictedTrack>,
}

/// Current kinematic state of a pedestrian as seen by a predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianSnapshot {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Linear extrapolation `p + v k dt`, `k = 1..=K`.
pub fn predict_constant_velocity(peds: &[PedestrianSnapshot], horizon: usize, dt: f64) -> PredictedTrajectories {
    let tracks = peds
        .iter()
        .map(|p| PredictedTrack {
            pedestrian_id: p.id,
            radius: p.radius,
            positions: (1..=horizon).map(|k| p.position + p.velocity * (k as f64 * dt)).collect(),
        })
        .collect();
    PredictedTrajectories { horizon, tracks }
}

/// Rolls the true social-force dynamics forward `horizon` steps on a copy of
/// the world with goal changes switched off. The live world is untouched.
pub fn predict_oracle_sf(world: &WorldState, horizon: usize) -> PredictedTrajectories {
    let mut shadow = world.clone();
    shadow.goal_resampling = false;
    let mut tracks: Vec<PredictedTrack> = world
        .pedestrians
        .iter()
        .map(|p| PredictedTrack {
            pedestrian_id: p.id,
            radius: p.state.radius,
            positions: Vec::with_capacity(horizon),
        })
        .collect();
    for _ in 0..horizon {
        shadow.sf_step();
        for (track, p) in tracks.iter_mut().zip(&shadow.pedestrians) {
            track.positions.push(p.state.position);
        }
    }
    PredictedTrajectories { horizon, tracks }
}

/// Pluggable forecaster used by the environment for the lookahead term.
pub trait PedestrianPredictor: Send + Sync {
    fn predict(&self, world: &WorldState, pedestrian_ids: &[usize], horizon: usize) -> PredictedTrajectories;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocityPredictor;

impl PedestrianPredictor for ConstantVelocityPredictor {
    fn predict(&self, world: &WorldState, pedestrian_ids: &[usize], horizon: usize) -> PredictedTrajectories {
        let peds: Vec<PedestrianSnapshot> = pedestrian_ids
            .iter()
            .filter_map(|&id| world.pedestrian_by_id(id))
            .map(|p| PedestrianSnapshot {
                id: p.id,
                position: p.state.position,
                velocity: p.state.velocity,
                radius: p.state.radius,
            })
            .collect();
        predict_constant_velocity(&peds, horizon, world.config.dt)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSocialForcePredictor;

impl PedestrianPredictor for OracleSocialForcePredictor {
    fn predict(&self, world: &WorldState, pedestrian_ids: &[usize], horizon: usize) -> PredictedTrajectories {
        let mut all = predict_oracle_sf(world, horizon);
        all.tracks.retain(|t| pedestrian_ids.contains(&t.pedestrian_id));
        all
    }
}

pub fn predictor_for(kind: PredictorKind) -> Box<dyn PedestrianPredictor> {
    match kind {
        PredictorKind::ConstantVelocity => Box::new(ConstantVelocityPredictor),
        PredictorKind::OracleSocialForce => Box::new(OracleSocialForcePredictor),
    }
}

/// Earliest lookahead step `k` (1-based) at which the robot, holding the
/// commanded velocity, comes within `d_comfort` of the predicted pedestrian.
pub fn first_intrusion_step(robot: &AgentState, action: [f64; 2], track: &PredictedTrack, cfg: &RewardConfig) -> Option<usize> {
    let velocity = Vec2::new(action[0], action[1]) * robot.v_pref;
    track.positions.iter().enumerate().find_map(|(idx, ped)| {
        let k = idx + 1;
        let virtual_pos = robot.position + velocity * (k as f64 * cfg.dt);
        let surface = (virtual_pos - ped).norm() - robot.radius - track.radius;
        (surface < cfg.d_comfort).then_some(k)
    })
}

/// Lookahead comfort penalty: `-exp(-k*)` for the earliest intruding step
/// `k*` per pedestrian, minimised over pedestrians; zero without intrusion.
/// Always lies in `[-exp(-1), 0]`.
pub fn k_step_reward(robot: &AgentState, action: [f64; 2], predictions: &PredictedTrajectories, cfg: &RewardConfig) -> Result<f64> {
    if predictions.horizon != cfg.lookahead_steps {
        return Err(Error::contract(format!(
            "prediction horizon {} differs from lookahead_steps {}",
            predictions.horizon, cfg.lookahead_steps
        )));
    }
    let mut reward = 0.0f64;
    for track in &predictions.tracks {
        if track.positions.len() != predictions.horizon {
            return Err(Error::contract(format!(
                "track for pedestrian {} has {} positions, expected {}",
                track.pedestrian_id,
                track.positions.len(),
                predictions.horizon
            )));
        }
        if let Some(k) = first_intrusion_step(robot, action, track, cfg) {
            reward = reward.min(-(-(k as f64)).exp());
        }
    }
    Ok(reward)
}

/// Per-robot reward from a proximity report: collision penalty, or goal
/// progress, time, comfort and lookahead terms.
pub fn basic_reward_from(robot: &AgentState, proximity: &ProximityReport, k_step_term: f64, cfg: &RewardConfig) -> f64 {
    if proximity.collision() {
        return cfg.collision_penalty;
    }
    let d_goal = (robot.goal - robot.position).norm();
    let comfort = if proximity.comfort_intrusion {
        -cfg.comfort_penalty
    } else {
        0.0
    };
    -cfg.f_scale * d_goal + cfg.r_time + comfort + k_step_term
}

pub fn basic_reward(world: &WorldState, robot_index: usize, k_step_term: f64, cfg: &RewardConfig) -> f64 {
    let proximity = world.collision_check(robot_index);
    basic_reward_from(&world.robots[robot_index].state, &proximity, k_step_term, cfg)
}

/// Team reward: plain sum of the per-robot rewards.
pub fn joint_reward(per_robot: &[f64]) -> f64 {
    per_robot.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorldConfig;

    fn cfg() -> RewardConfig {
        RewardSchedule::default().config_for(usize::MAX, &WorldConfig::default())
    }

    fn robot_at(x: f64, y: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            velocity: Vec2::zeros(),
            radius: 0.6,
            goal: Vec2::new(x + 3.0, y),
            v_pref: 1.0,
            heading: 0.0,
        }
    }

    fn static_track(id: usize, p: Vec2, radius: f64, k: usize) -> PredictedTrack {
        PredictedTrack {
            pedestrian_id: id,
            radius,
            positions: vec![p; k],
        }
    }

    #[test]
    fn constant_velocity_extrapolates_linearly() {
        let peds = [PedestrianSnapshot {
            id: 3,
            position: Vec2::new(1.0, 2.0),
            velocity: Vec2::new(1.0, 0.0),
            radius: 0.5,
        }];
        let pred = predict_constant_velocity(&peds, 5, 0.25);
        let xs: Vec<f64> = pred.tracks[0].positions.iter().map(|p| p.x - 1.0).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75, 1.0, 1.25]);
        let still = predict_constant_velocity(&[PedestrianSnapshot { velocity: Vec2::zeros(), ..peds[0] }], 5, 0.25);
        assert!(still.tracks[0].positions.iter().all(|p| *p == peds[0].position));
    }

    #[test]
    fn stage_schedule_switches_once() {
        let s = RewardSchedule {
            stage2_start_episode: 10,
            ..RewardSchedule::default()
        };
        let w = WorldConfig::default();
        let switches = (1..30)
            .filter(|&e| s.config_for(e, &w).stage != s.config_for(e - 1, &w).stage)
            .count();
        assert_eq!(switches, 1);
        assert_eq!(s.config_for(9, &w).collision_penalty, -1.0);
        assert!(!s.config_for(9, &w).k_step_enabled);
        assert_eq!(s.config_for(10, &w).collision_penalty, -5.0);
        assert!(s.config_for(10, &w).k_step_enabled);
    }

    #[test]
    fn no_intrusion_gives_zero() {
        let c = cfg();
        let pred = PredictedTrajectories {
            horizon: 5,
            tracks: vec![static_track(9, Vec2::new(0.0, 10.0), 0.5, 5)],
        };
        assert_eq!(k_step_reward(&robot_at(0.0, 0.0), [1.0, 0.0], &pred, &c).unwrap(), 0.0);
    }

    #[test]
    fn earliest_intrusion_sets_penalty() {
        let c = cfg();
        // Robot moves +x at 0.25 m/step; pedestrian surface gap reaches
        // d_comfort between k = 1 and k = 2.
        let ped = Vec2::new(0.6 + 0.5 + 0.25 + 0.4, 0.0);
        let pred = PredictedTrajectories {
            horizon: 5,
            tracks: vec![static_track(9, ped, 0.5, 5)],
        };
        let r = k_step_reward(&robot_at(0.0, 0.0), [1.0, 0.0], &pred, &c).unwrap();
        assert!((r + (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let c = cfg();
        let pred = PredictedTrajectories {
            horizon: 3,
            tracks: vec![],
        };
        assert!(k_step_reward(&robot_at(0.0, 0.0), [0.0, 0.0], &pred, &c).is_err());
    }

    #[test]
    fn basic_reward_branches() {
        let c = cfg();
        let r = robot_at(0.0, 0.0);
        let clear = ProximityReport {
            d_rr: vec![(1, 2.0)],
            d_rp: vec![(5, 3.0)],
            comfort_intrusion: false,
        };
        let v = basic_reward_from(&r, &clear, 0.0, &c);
        assert!((v - (-3.0 / 36.0 - 0.001)).abs() < 1e-15);
        let comfort = ProximityReport {
            comfort_intrusion: true,
            ..clear.clone()
        };
        assert!((basic_reward_from(&r, &comfort, 0.0, &c) - (v - 0.5)).abs() < 1e-15);
        let hit = ProximityReport {
            d_rp: vec![(5, -0.01)],
            ..clear
        };
        assert_eq!(basic_reward_from(&r, &hit, -0.3, &c), -5.0);
        let stage1 = RewardSchedule::default().config_for(0, &WorldConfig::default());
        assert_eq!(basic_reward_from(&r, &hit, 0.0, &stage1), -1.0);
    }

    #[test]
    fn joint_reward_sums() {
        assert_eq!(joint_reward(&[0.0, 0.0, 0.0]), 0.0);
        assert!((joint_reward(&[-1.0, -0.05, 0.0]) + 1.05).abs() < 1e-15);
        assert_eq!(joint_reward(&[0.0, -0.05, -1.0]), joint_reward(&[-1.0, 0.0, -0.05]));
    }

    #[test]
    fn oracle_predictor_is_pure() {
        let w = WorldState::reset(&WorldConfig::default(), 3).unwrap();
        let before = w.digest();
        let p = predict_oracle_sf(&w, 5);
        assert_eq!(p.tracks.len(), w.pedestrians.len());
        assert_eq!(w.digest(), before);
    }
}
