//! Navigation metrics computed purely from trajectory logs.
//!
//! Proximity is geometric (true radii, no field-of-view gating), so a
//! report recomputed from a persisted log equals the live one exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::logs::EpisodeLog;
use crate::sim::{AgentKind, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub config_fingerprint: String,
    pub episodes: usize,
    pub robot_episodes: usize,
    /// % of episodes in which every robot reached its goal.
    pub csr: f64,
    /// Collision onsets per 100 robot-episodes; may exceed 100.
    pub cr: f64,
    /// % of robot-episodes with at least one collision.
    pub cr_episodes: f64,
    /// Mean path length (m) of robots that reached their goal.
    pub apl: Option<f64>,
    /// Mean steps until every robot finished; failures count the step cap.
    pub ntc: f64,
    /// % of robot-steps with a pedestrian inside the comfort distance.
    pub cir: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct RobotTally {
    reached_at: Option<usize>,
    path: f64,
    collision_onsets: usize,
    steps: usize,
    intrusions: usize,
}

fn surface(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    (a.x - b.x).hypot(a.y - b.y) - a.radius - b.radius
}

fn tally_episode(log: &EpisodeLog) -> Vec<RobotTally> {
    let h = &log.header;
    let mut tallies = vec![RobotTally::default(); h.n_robots];
    let mut last_pos: Vec<Option<(f64, f64)>> = vec![None; h.n_robots];
    let mut was_colliding = vec![false; h.n_robots];

    let mut by_step: BTreeMap<usize, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in &log.records {
        by_step.entry(r.step).or_default().push(r);
    }
    for (&step, recs) in &by_step {
        let robots: Vec<&&TrajectoryRecord> = recs.iter().filter(|r| r.kind == AgentKind::Robot).collect();
        let peds: Vec<&&TrajectoryRecord> = recs.iter().filter(|r| r.kind == AgentKind::Pedestrian).collect();
        for r in &robots {
            let i = r.agent_id;
            let t = &mut tallies[i];
            if t.reached_at.is_some() {
                continue;
            }
            if let Some((x, y)) = last_pos[i] {
                t.path += (r.x - x).hypot(r.y - y);
            }
            last_pos[i] = Some((r.x, r.y));
            if step > 0 {
                t.steps += 1;
                let colliding = robots
                    .iter()
                    .filter(|o| o.agent_id != i)
                    .chain(peds.iter())
                    .any(|o| surface(r, o) < 0.0);
                if colliding && !was_colliding[i] {
                    t.collision_onsets += 1;
                }
                was_colliding[i] = colliding;
                if peds.iter().any(|p| surface(r, p) < h.d_comfort) {
                    t.intrusions += 1;
                }
            }
            let g = h.goals[i];
            if (g[0] - r.x).hypot(g[1] - r.y) < h.goal_tolerance {
                t.reached_at = Some(step);
            }
        }
    }
    tallies
}

/// Deterministic aggregation over episodes, in log order.
pub fn compute_metrics(logs: &[EpisodeLog]) -> MetricsReport {
    let mut successes = 0usize;
    let mut robot_episodes = 0usize;
    let mut onsets = 0usize;
    let mut collided_robot_episodes = 0usize;
    let (mut path_sum, mut path_count) = (0.0, 0usize);
    let mut ntc_sum = 0.0;
    let (mut steps, mut intrusions) = (0usize, 0usize);

    for log in logs {
        let tallies = tally_episode(log);
        robot_episodes += tallies.len();
        let success = tallies.iter().all(|t| t.reached_at.is_some());
        if success {
            successes += 1;
            ntc_sum += tallies.iter().filter_map(|t| t.reached_at).max().unwrap_or(0) as f64;
        } else {
            ntc_sum += log.header.max_timesteps as f64;
        }
        for t in &tallies {
            onsets += t.collision_onsets;
            collided_robot_episodes += usize::from(t.collision_onsets > 0);
            if t.reached_at.is_some() {
                path_sum += t.path;
                path_count += 1;
            }
            steps += t.steps;
            intrusions += t.intrusions;
        }
    }
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let first = logs.first().map(|l| &l.header);
    MetricsReport {
        policy: first.map(|h| h.policy.clone()).unwrap_or_default(),
        config_fingerprint: first.map(|h| h.config_fingerprint.clone()).unwrap_or_default(),
        episodes: logs.len(),
        robot_episodes,
        csr: pct(successes, logs.len()),
        cr: pct(onsets, robot_episodes),
        cr_episodes: pct(collided_robot_episodes, robot_episodes),
        apl: (path_count > 0).then(|| path_sum / path_count as f64),
        ntc: if logs.is_empty() { 0.0 } else { ntc_sum / logs.len() as f64 },
        cir: pct(intrusions, steps),
    }
}
