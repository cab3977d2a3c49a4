//! Helbing-style social force: relaxation toward a goal-directed desired
//! velocity plus exponential repulsion from nearby bodies.

use serde::{Deserialize, Serialize};

use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocialForceParams {
    /// Relaxation time of the driving term (s).
    pub relaxation_time: f64,
    /// Repulsion magnitude at contact (m/s²).
    pub interaction_strength: f64,
    /// Repulsion decay length (m).
    pub interaction_range: f64,
    /// Lower bound applied to centre distances before normalising (m).
    pub distance_floor: f64,
    /// Speed cap as a multiple of the preferred speed.
    pub speed_cap_factor: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            relaxation_time: 0.5,
            interaction_strength: 2.0,
            interaction_range: 0.3,
            distance_floor: 1e-3,
            speed_cap_factor: 1.3,
        }
    }
}

/// Velocity the agent would like to have: full preferred speed toward the
/// goal, tapered so that one step never overshoots it. Zero at the goal.
pub fn desired_velocity(position: Vec2, goal: Vec2, v_pref: f64, dt: f64) -> Vec2 {
    let to_goal = goal - position;
    let dist = to_goal.norm();
    if dist <= f64::EPSILON {
        return Vec2::zeros();
    }
    let speed = v_pref.min(dist / dt);
    to_goal * (speed / dist)
}

/// Driving term `(v_desired - v) / tau`.
pub fn driving_force(velocity: Vec2, desired: Vec2, params: &SocialForceParams) -> Vec2 {
    (desired - velocity) / params.relaxation_time
}

/// Repulsion exerted on a body at `position` (radius `radius`) by one at
/// `other` (radius `other_radius`): `A exp((r_i + r_j - d) / B) n_ij`.
pub fn pair_repulsion(
    position: Vec2,
    radius: f64,
    other: Vec2,
    other_radius: f64,
    params: &SocialForceParams,
) -> Vec2 {
    let diff = position - other;
    let raw = diff.norm();
    let dist = raw.max(params.distance_floor);
    // Coincident centres have no direction; push along +x deterministically.
    let normal = if raw > 0.0 { diff / raw } else { Vec2::new(1.0, 0.0) };
    let magnitude =
        params.interaction_strength * ((radius + other_radius - dist) / params.interaction_range).exp();
    normal * magnitude
}

/// Total acceleration acting on an agent given its neighbours as
/// `(position, radius)` pairs.
pub fn social_acceleration<I>(
    position: Vec2,
    velocity: Vec2,
    radius: f64,
    desired: Vec2,
    neighbours: I,
    params: &SocialForceParams,
) -> Vec2
where
    I: IntoIterator<Item = (Vec2, f64)>,
{
    let mut acc = driving_force(velocity, desired, params);
    for (other, other_radius) in neighbours {
        acc += pair_repulsion(position, radius, other, other_radius, params);
    }
    acc
}

/// Euler velocity update followed by a norm clamp at `cap`.
pub fn integrate_velocity(velocity: Vec2, acceleration: Vec2, dt: f64, cap: f64) -> Vec2 {
    clamp_norm(velocity + acceleration * dt, cap)
}

pub fn clamp_norm(v: Vec2, cap: f64) -> Vec2 {
    let n = v.norm();
    if n > cap && n > 0.0 {
        v * (cap / n)
    } else {
        v
    }
}
