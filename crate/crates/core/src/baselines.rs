//! Classical decentralised controllers: optimal reciprocal collision
//! avoidance (half-plane constraints solved by incremental 2-D linear
//! programming) and a social-force robot. Both are pure functions of the
//! current world snapshot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::social_force::{self, SocialForceParams};
use crate::sim::{AgentKind, WorldState};
use crate::Vec2;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrcaConfig {
    /// Look-ahead for agent-agent constraints (s).
    pub time_horizon: f64,
    /// Look-ahead for static obstacles (s); kept for completeness, the
    /// scenes here have none.
    pub time_horizon_static: f64,
    /// Neighbour cut-off (m); `None` uses the field-of-view range.
    pub neighbor_range: Option<f64>,
    /// Speed limit (m/s); `None` uses the robot's preferred speed. The
    /// command box admits up to `sqrt(2) * v_pref` along the diagonals.
    pub max_speed: Option<f64>,
    /// Share of the avoidance effort a robot takes against another robot.
    pub robot_responsibility: f64,
    /// Share taken against a pedestrian (pedestrians do not react).
    pub pedestrian_responsibility: f64,
    /// Extra clearance added to the robot radius (m).
    pub safety_margin: f64,
    /// Rotation applied to the preferred velocity (rad) so perfectly
    /// symmetric encounters do not stall.
    pub preference_rotation: f64,
}

impl Default for OrcaConfig {
    fn default() -> Self {
        Self {
            time_horizon: 3.0,
            time_horizon_static: 2.0,
            neighbor_range: None,
            max_speed: Some(std::f64::consts::SQRT_2),
            robot_responsibility: 0.5,
            pedestrian_responsibility: 1.0,
            safety_margin: 0.35,
            preference_rotation: 0.05,
        }
    }
}

impl OrcaConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, m: &str| Error::ConfigKey {
            key: format!("orca.{key}"),
            message: m.into(),
        };
        if !(self.time_horizon > 0.0) {
            return Err(err("time_horizon", "must be > 0"));
        }
        if !(self.time_horizon_static > 0.0) {
            return Err(err("time_horizon_static", "must be > 0"));
        }
        if let Some(r) = self.neighbor_range {
            if !(r > 0.0) {
                return Err(err("neighbor_range", "must be > 0"));
            }
        }
        if let Some(s) = self.max_speed {
            if !(s > 0.0) {
                return Err(err("max_speed", "must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.robot_responsibility) || !(0.0..=1.0).contains(&self.pedestrian_responsibility) {
            return Err(err("robot_responsibility", "responsibilities must lie in [0, 1]"));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(err("safety_margin", "must be >= 0"));
        }
        Ok(())
    }
}

/// Directed line; the permitted half-plane lies to its left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub direction: Vec2,
}

fn det(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// A neighbour as ORCA sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcaNeighbor {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub responsibility: f64,
}

/// Velocity-obstacle half-plane induced by one neighbour.
pub fn orca_half_plane(
    position: Vec2,
    velocity: Vec2,
    radius: f64,
    other: &OrcaNeighbor,
    time_horizon: f64,
    dt: f64,
) -> HalfPlane {
    let rel_pos = other.position - position;
    let rel_vel = velocity - other.velocity;
    let dist_sq = rel_pos.norm_squared();
    let combined = radius + other.radius;
    let combined_sq = combined * combined;
    let inv_th = 1.0 / time_horizon;
    let (direction, u);
    if dist_sq > combined_sq {
        let w = rel_vel - rel_pos * inv_th;
        let w_len_sq = w.norm_squared();
        let dot1 = w.dot(&rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_sq * w_len_sq {
            // Closest point lies on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined * inv_th - w_len);
        } else {
            // Closest point lies on one of the cone legs.
            let leg = (dist_sq - combined_sq).sqrt();
            direction = if det(rel_pos, w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(&direction);
            u = direction * dot2 - rel_vel;
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > 0.0 { w / w_len } else { -rel_pos.normalize() };
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined * inv_dt - w_len);
    }
    HalfPlane {
        point: velocity + u * other.responsibility,
        direction,
    }
}

fn linear_program1(lines: &[HalfPlane], line_no: usize, radius: f64, opt: Vec2, direction_opt: bool) -> Option<Vec2> {
    let l = lines[line_no];
    let dot = l.point.dot(&l.direction);
    let disc = dot * dot + radius * radius - l.point.norm_squared();
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut t_left = -dot - sq;
    let mut t_right = -dot + sq;
    for other in &lines[..line_no] {
        let denom = det(l.direction, other.direction);
        let numer = det(other.direction, l.point - other.point);
        if denom.abs() <= EPS {
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }
    Some(if direction_opt {
        if opt.dot(&l.direction) > 0.0 {
            l.point + l.direction * t_right
        } else {
            l.point + l.direction * t_left
        }
    } else {
        let t = l.direction.dot(&(opt - l.point));
        l.point + l.direction * t.clamp(t_left, t_right)
    })
}

/// Returns the index of the first constraint that could not be satisfied
/// (`lines.len()` on success) and the best velocity found.
fn linear_program2(lines: &[HalfPlane], radius: f64, opt: Vec2, direction_opt: bool) -> (usize, Vec2) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_squared() > radius * radius {
        opt.normalize() * radius
    } else {
        opt
    };
    for (i, l) in lines.iter().enumerate() {
        if det(l.direction, l.point - result) > 0.0 {
            match linear_program1(lines, i, radius, opt, direction_opt) {
                Some(r) => result = r,
                None => return (i, result),
            }
        }
    }
    (lines.len(), result)
}

/// Minimises the largest constraint violation when the 2-D program is infeasible.
fn linear_program3(lines: &[HalfPlane], begin: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        let li = lines[i];
        if det(li.direction, li.point - result) > distance {
            let mut proj = Vec::with_capacity(i);
            for lj in &lines[..i] {
                let d = det(li.direction, lj.direction);
                let point = if d.abs() <= EPS {
                    if li.direction.dot(&lj.direction) > 0.0 {
                        continue;
                    }
                    (li.point + lj.point) * 0.5
                } else {
                    li.point + li.direction * (det(lj.direction, li.point - lj.point) / d)
                };
                let dir = lj.direction - li.direction;
                let n = dir.norm();
                if n <= EPS {
                    continue;
                }
                proj.push(HalfPlane {
                    point,
                    direction: dir / n,
                });
            }
            let temp = result;
            let (fail, r) = linear_program2(&proj, radius, Vec2::new(-li.direction.y, li.direction.x), true);
            result = if fail < proj.len() { temp } else { r };
            distance = det(li.direction, li.point - result);
        }
    }
    result
}

/// Velocity within the disc of radius `max_speed` closest to `preferred`
/// that satisfies every half-plane (least violation if infeasible).
pub fn solve_orca(lines: &[HalfPlane], max_speed: f64, preferred: Vec2) -> Vec2 {
    let (fail, result) = linear_program2(lines, max_speed, preferred, false);
    if fail < lines.len() {
        linear_program3(lines, fail, max_speed, result)
    } else {
        result
    }
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Neighbours of a robot under perfect sensing: true states of every agent
/// its field of view admits, within `neighbor_range`.
pub fn orca_neighbors(robot_index: usize, world: &WorldState, config: &OrcaConfig) -> Vec<OrcaNeighbor> {
    let range = config.neighbor_range.unwrap_or(world.config.fov_range);
    let me = world.robots[robot_index].state.position;
    world
        .sense(robot_index)
        .others
        .iter()
        .filter_map(|o| {
            let (state, responsibility) = match o.kind {
                AgentKind::Robot => (&world.robots[o.agent_id].state, config.robot_responsibility),
                AgentKind::Pedestrian => (&world.pedestrian_by_id(o.agent_id)?.state, config.pedestrian_responsibility),
            };
            ((state.position - me).norm() <= range).then_some(OrcaNeighbor {
                position: state.position,
                velocity: state.velocity,
                radius: state.radius,
                responsibility,
            })
        })
        .collect()
}

/// ORCA velocity for robot `robot_index`.
pub fn orca_step(robot_index: usize, world: &WorldState, config: &OrcaConfig) -> Vec2 {
    let robot = &world.robots[robot_index];
    if !robot.active {
        return Vec2::zeros();
    }
    let s = &robot.state;
    let max_speed = config.max_speed.unwrap_or(s.v_pref);
    let preferred = rotate(
        social_force::desired_velocity(s.position, s.goal, s.v_pref, world.config.dt),
        config.preference_rotation,
    );
    let radius = s.radius + config.safety_margin;
    let lines: Vec<HalfPlane> = orca_neighbors(robot_index, world, config)
        .iter()
        .map(|n| orca_half_plane(s.position, s.velocity, radius, n, config.time_horizon, world.config.dt))
        .collect();
    solve_orca(&lines, max_speed, preferred)
}

/// Social-force robot: the pedestrian law applied to the robot, repelled by
/// every agent it senses (with perceived radii), speed capped at `v_pref`.
pub fn sf_robot_step(robot_index: usize, world: &WorldState, params: &SocialForceParams) -> Vec2 {
    let robot = &world.robots[robot_index];
    if !robot.active {
        return Vec2::zeros();
    }
    let s = &robot.state;
    let dt = world.config.dt;
    let desired = social_force::desired_velocity(s.position, s.goal, s.v_pref, dt);
    let obs = world.sense(robot_index);
    let neighbours = obs
        .others
        .iter()
        .map(|o| (s.position + o.relative_position, o.perceived_radius));
    let acc = social_force::social_acceleration(s.position, s.velocity, s.radius, desired, neighbours, params);
    social_force::integrate_velocity(s.velocity, acc, dt, s.v_pref)
}

/// Converts a velocity into a normalised command in `[-1, 1]^2`.
pub fn velocity_to_action(v: Vec2, v_pref: f64) -> [f64; 2] {
    [(v.x / v_pref).clamp(-1.0, 1.0), (v.y / v_pref).clamp(-1.0, 1.0)]
}
