//! Seedable 2-D crowd simulator: social-force pedestrians, holonomic robots,
//! limited field-of-view sensing with radius noise, collision geometry and
//! trajectory logging.
//!
//! Agent ids are global: robots occupy `0..n_robots`, pedestrians follow.
//! Pedestrians never react to robots, so removing every robot from a scene
//! leaves the pedestrian trajectories untouched.

pub mod social_force;

use std::f64::consts::{PI, TAU};
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;
pub use social_force::SocialForceParams;

const STREAM_PED_LAYOUT: u64 = 1;
const STREAM_ROBOT_LAYOUT: u64 = 2;
const STREAM_PED_DYNAMICS: u64 = 3;
const STREAM_SENSING: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Robot,
    Pedestrian,
}

/// What a collision does to the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    /// Any collision ends the episode.
    Terminate,
    /// Collisions are recorded and penalised but the episode runs on.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PedestrianSampling {
    pub radius_range: [f64; 2],
    pub v_pref_range: [f64; 2],
    pub goal_change_prob_range: [f64; 2],
    /// Number of steps over which `goal_change_prob` is the probability of at
    /// least one change; the per-step probability is derived from it.
    pub goal_change_window: f64,
    /// Comfort-zone margin beyond the safety radius. Defaults to `d_comfort`.
    pub comfort_margin: Option<f64>,
}

impl Default for PedestrianSampling {
    fn default() -> Self {
        Self {
            radius_range: [0.5, 1.3],
            v_pref_range: [0.5, 1.5],
            goal_change_prob_range: [0.2, 0.3],
            goal_change_window: 25.0,
            comfort_margin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    pub radius: f64,
    pub v_pref: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            radius: 0.6,
            v_pref: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub scenario_radius: f64,
    pub n_pedestrians: usize,
    pub n_robots: usize,
    pub fov_range: f64,
    pub fov_angle: f64,
    pub dt: f64,
    pub max_timesteps: usize,
    /// Half-width of the uniform noise added to perceived pedestrian radii.
    pub radius_noise_scale: f64,
    pub seed: u64,
    /// Surface distance under which a robot intrudes a pedestrian's comfort zone.
    pub d_comfort: f64,
    /// Robots closer than this to their goal are done. Defaults to the robot radius.
    pub goal_tolerance: Option<f64>,
    pub angular_jitter: f64,
    pub position_jitter: f64,
    pub placement_attempts: usize,
    pub collision_mode: CollisionMode,
    pub pedestrian: PedestrianSampling,
    pub robot: RobotParams,
    pub social_force: SocialForceParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            scenario_radius: 6.0,
            n_pedestrians: 5,
            n_robots: 3,
            fov_range: 10.0,
            fov_angle: TAU,
            dt: 0.25,
            max_timesteps: 150,
            radius_noise_scale: 0.05,
            seed: 0,
            d_comfort: 0.25,
            goal_tolerance: None,
            angular_jitter: 0.2,
            position_jitter: 0.3,
            placement_attempts: 100,
            collision_mode: CollisionMode::Terminate,
            pedestrian: PedestrianSampling::default(),
            robot: RobotParams::default(),
            social_force: SocialForceParams::default(),
        }
    }
}

fn key_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: format!("world.{key}"),
        message: message.into(),
    }
}

fn check_range(key: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(key_err(key, format!("expected {lo} <= min <= max <= {hi}, got {r:?}")));
    }
    Ok(())
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scenario_radius > 0.0) {
            return Err(key_err("scenario_radius", "must be > 0"));
        }
        if !(self.dt > 0.0) {
            return Err(key_err("dt", "must be > 0"));
        }
        if self.max_timesteps == 0 {
            return Err(key_err("max_timesteps", "must be > 0"));
        }
        if !(self.fov_range > 0.0) {
            return Err(key_err("fov_range", "must be > 0"));
        }
        if !(self.fov_angle > 0.0 && self.fov_angle <= TAU + 1e-12) {
            return Err(key_err("fov_angle", "must lie in (0, 2*pi]"));
        }
        if !(self.radius_noise_scale >= 0.0) {
            return Err(key_err("radius_noise_scale", "must be >= 0"));
        }
        if !(self.d_comfort >= 0.0) {
            return Err(key_err("d_comfort", "must be >= 0"));
        }
        if let Some(t) = self.goal_tolerance {
            if !(t > 0.0) {
                return Err(key_err("goal_tolerance", "must be > 0"));
            }
        }
        if self.placement_attempts == 0 {
            return Err(key_err("placement_attempts", "must be > 0"));
        }
        check_range("pedestrian.radius_range", self.pedestrian.radius_range, f64::MIN_POSITIVE, f64::INFINITY)?;
        check_range("pedestrian.v_pref_range", self.pedestrian.v_pref_range, f64::MIN_POSITIVE, f64::INFINITY)?;
        check_range("pedestrian.goal_change_prob_range", self.pedestrian.goal_change_prob_range, 0.0, 1.0)?;
        if !(self.pedestrian.goal_change_window >= 1.0) {
            return Err(key_err("pedestrian.goal_change_window", "must be >= 1"));
        }
        if !(self.robot.radius > 0.0) {
            return Err(key_err("robot.radius", "must be > 0"));
        }
        if !(self.robot.v_pref > 0.0) {
            return Err(key_err("robot.v_pref", "must be > 0"));
        }
        let sf = &self.social_force;
        if !(sf.relaxation_time > 0.0 && sf.interaction_range > 0.0 && sf.distance_floor > 0.0) {
            return Err(key_err("social_force", "relaxation_time, interaction_range and distance_floor must be > 0"));
        }
        if !(sf.speed_cap_factor >= 1.0) {
            return Err(key_err("social_force.speed_cap_factor", "must be >= 1"));
        }
        Ok(())
    }

    pub fn goal_tolerance(&self) -> f64 {
        self.goal_tolerance.unwrap_or(self.robot.radius)
    }

    pub fn comfort_margin(&self) -> f64 {
        self.pedestrian.comfort_margin.unwrap_or(self.d_comfort)
    }

    /// Per-step goal change probability such that the chance of at least one
    /// change over `goal_change_window` steps equals `window_prob`.
    pub fn per_step_goal_change_prob(&self, window_prob: f64) -> f64 {
        1.0 - (1.0 - window_prob).powf(1.0 / self.pedestrian.goal_change_window)
    }

    /// Total number of agents in a scene.
    pub fn n_agents(&self) -> usize {
        self.n_robots + self.n_pedestrians
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// Safety-zone radius (m).
    pub radius: f64,
    pub goal: Vec2,
    pub v_pref: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub id: usize,
    pub state: AgentState,
    pub comfort_radius: f64,
    pub goal_change_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Robot {
    pub id: usize,
    pub state: AgentState,
    /// False once the robot has reached its goal and left the scene.
    pub active: bool,
    pub reached_goal: bool,
    /// Clock value at which the robot reached its goal.
    pub retired_at: Option<usize>,
    /// Position change over the last step.
    pub displacement: Vec2,
}

/// One entry of the variable-length part of an observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedAgent {
    pub agent_id: usize,
    pub kind: AgentKind,
    pub relative_position: Vec2,
    /// Noisy for pedestrians, exact for robots.
    pub perceived_radius: f64,
}

/// Per-robot observation: 9-component ego vector plus the agents in view.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `[p_x, p_y, r, g_x - p_x, g_y - p_y, v_pref, v_x, v_y, heading]`
    pub ego: [f64; 9],
    pub others: Vec<SensedAgent>,
    pub timestamp: usize,
}

/// Surface distances from one robot to the agents in its field of view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProximityReport {
    /// `(robot id, surface distance)` for other robots in view.
    pub d_rr: Vec<(usize, f64)>,
    /// `(pedestrian id, surface distance)` for pedestrians in view.
    pub d_rp: Vec<(usize, f64)>,
    pub comfort_intrusion: bool,
}

impl ProximityReport {
    pub fn collision(&self) -> bool {
        self.d_rr.iter().chain(&self.d_rp).any(|&(_, d)| d < 0.0)
    }
}

/// What happened during one call to [`WorldState::advance`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Proximity after the move, `None` for robots already retired before the step.
    pub proximity: Vec<Option<ProximityReport>>,
    pub reached_goal_now: Vec<bool>,
    pub collision: bool,
    pub all_reached: bool,
    pub timeout: bool,
    pub done: bool,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub agent_id: usize,
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: WorldConfig,
    pub robots: Vec<Robot>,
    pub pedestrians: Vec<Pedestrian>,
    pub clock: usize,
    /// Perceived pedestrian radii, redrawn every step.
    pub perceived_radii: Vec<f64>,
    pub goal_resampling: bool,
    ped_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit(theta: f64) -> Vec2 {
    Vec2::new(theta.cos(), theta.sin())
}

fn sample_range(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

struct Placed {
    start: Vec2,
    goal: Vec2,
    radius: f64,
}

/// Circle-crossing placement with rejection sampling against already placed
/// starts and goals.
fn place_agent(rng: &mut ChaCha8Rng, radius: f64, placed: &[Placed], config: &WorldConfig) -> Option<(Vec2, Vec2)> {
    let r = config.scenario_radius;
    let pj = config.position_jitter;
    let aj = config.angular_jitter;
    for _ in 0..config.placement_attempts {
        let theta = rng.random_range(0.0..TAU);
        let jitter = if pj > 0.0 {
            Vec2::new(rng.random_range(-pj..=pj), rng.random_range(-pj..=pj))
        } else {
            Vec2::zeros()
        };
        let goal_angle = theta + PI + if aj > 0.0 { rng.random_range(-aj..=aj) } else { 0.0 };
        let start = unit(theta) * r + jitter;
        let goal = unit(goal_angle) * r;
        let free = placed.iter().all(|p| {
            let min_gap = radius + p.radius;
            (start - p.start).norm() > min_gap && (goal - p.goal).norm() > min_gap
        });
        if free {
            return Some((start, goal));
        }
    }
    None
}

fn heading_of(v: Vec2, previous: f64) -> f64 {
    if v.x != 0.0 || v.y != 0.0 {
        v.y.atan2(v.x)
    } else {
        previous
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a < -PI {
        a += TAU;
    }
    a
}

impl WorldState {
    /// Builds a fresh scene. Identical `(config, seed)` pairs yield identical states.
    pub fn reset(config: &WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ped_layout = stream(seed, STREAM_PED_LAYOUT);
        let mut robot_layout = stream(seed, STREAM_ROBOT_LAYOUT);
        let n_robots = config.n_robots;
        let margin = config.comfort_margin();

        let mut placed = Vec::with_capacity(config.n_agents());
        let mut pedestrians = Vec::with_capacity(config.n_pedestrians);
        for k in 0..config.n_pedestrians {
            let radius = sample_range(&mut ped_layout, config.pedestrian.radius_range);
            let v_pref = sample_range(&mut ped_layout, config.pedestrian.v_pref_range);
            let goal_change_prob = sample_range(&mut ped_layout, config.pedestrian.goal_change_prob_range);
            let (start, goal) = place_agent(&mut ped_layout, radius, &placed, config).ok_or_else(|| {
                Error::Config(format!(
                    "could not place pedestrian {k} after {} attempts; scene too dense",
                    config.placement_attempts
                ))
            })?;
            placed.push(Placed { start, goal, radius });
            let heading = (goal - start).y.atan2((goal - start).x);
            pedestrians.push(Pedestrian {
                id: n_robots + k,
                state: AgentState {
                    position: start,
                    velocity: Vec2::zeros(),
                    radius,
                    goal,
                    v_pref,
                    heading,
                },
                comfort_radius: radius + margin,
                goal_change_prob,
            });
        }

        let mut robots = Vec::with_capacity(n_robots);
        for id in 0..n_robots {
            let radius = config.robot.radius;
            let (start, goal) = place_agent(&mut robot_layout, radius, &placed, config).ok_or_else(|| {
                Error::Config(format!(
                    "could not place robot {id} after {} attempts; scene too dense",
                    config.placement_attempts
                ))
            })?;
            placed.push(Placed { start, goal, radius });
            let heading = (goal - start).y.atan2((goal - start).x);
            robots.push(Robot {
                id,
                state: AgentState {
                    position: start,
                    velocity: Vec2::zeros(),
                    radius,
                    goal,
                    v_pref: config.robot.v_pref,
                    heading,
                },
                active: true,
                reached_goal: false,
                retired_at: None,
                displacement: Vec2::zeros(),
            });
        }

        let mut world = Self {
            config: config.clone(),
            robots,
            pedestrians,
            clock: 0,
            perceived_radii: Vec::new(),
            goal_resampling: true,
            ped_rng: stream(seed, STREAM_PED_DYNAMICS),
            noise_rng: stream(seed, STREAM_SENSING),
        };
        world.redraw_perceived_radii();
        Ok(world)
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn pedestrian_by_id(&self, id: usize) -> Option<&Pedestrian> {
        id.checked_sub(self.robots.len()).and_then(|k| self.pedestrians.get(k))
    }

    fn redraw_perceived_radii(&mut self) {
        let s = self.config.radius_noise_scale;
        let rng = &mut self.noise_rng;
        self.perceived_radii = self
            .pedestrians
            .iter()
            .map(|p| {
                let noise = if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
                (p.state.radius + noise).max(1e-3)
            })
            .collect();
    }

    /// Social-force update of every pedestrian. Forces come from other
    /// pedestrians only and are evaluated on the pre-step snapshot.
    pub fn sf_step(&mut self) {
        let params = self.config.social_force;
        let dt = self.config.dt;
        let snapshot: Vec<(Vec2, f64)> = self
            .pedestrians
            .iter()
            .map(|p| (p.state.position, p.state.radius))
            .collect();
        let velocities: Vec<Vec2> = self
            .pedestrians
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = &p.state;
                let desired = social_force::desired_velocity(s.position, s.goal, s.v_pref, dt);
                let neighbours = snapshot
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &n)| n);
                let acc =
                    social_force::social_acceleration(s.position, s.velocity, s.radius, desired, neighbours, &params);
                social_force::integrate_velocity(s.velocity, acc, dt, params.speed_cap_factor * s.v_pref)
            })
            .collect();
        for (p, v) in self.pedestrians.iter_mut().zip(velocities) {
            p.state.velocity = v;
            p.state.position += v * dt;
            p.state.heading = heading_of(v, p.state.heading);
        }
    }

    /// Each pedestrian independently draws a new goal on the scenario circle
    /// with its per-step change probability.
    pub fn maybe_resample_goals(&mut self) {
        if !self.goal_resampling {
            return;
        }
        let r = self.config.scenario_radius;
        for k in 0..self.pedestrians.len() {
            let p_step = self.config.per_step_goal_change_prob(self.pedestrians[k].goal_change_prob);
            let u: f64 = self.ped_rng.random();
            if u < p_step {
                let theta = self.ped_rng.random_range(0.0..TAU);
                self.pedestrians[k].state.goal = unit(theta) * r;
            }
        }
    }

    /// Applies normalised velocity commands in `[-1, 1]^2`, scaled by each
    /// robot's preferred speed. Retired robots ignore their command.
    pub fn robot_step(&mut self, actions: &[[f64; 2]]) -> Result<()> {
        self.check_actions(actions)?;
        let dt = self.config.dt;
        for (robot, a) in self.robots.iter_mut().zip(actions) {
            if !robot.active {
                robot.state.velocity = Vec2::zeros();
                robot.displacement = Vec2::zeros();
                continue;
            }
            let v = Vec2::new(a[0], a[1]) * robot.state.v_pref;
            robot.state.velocity = v;
            robot.displacement = v * dt;
            robot.state.position += robot.displacement;
            robot.state.heading = heading_of(v, robot.state.heading);
        }
        Ok(())
    }

    /// Validates one command per robot with every component in `[-1, 1]`.
    pub fn check_actions(&self, actions: &[[f64; 2]]) -> Result<()> {
        if actions.len() != self.robots.len() {
            return Err(Error::contract(format!(
                "expected {} actions, got {}",
                self.robots.len(),
                actions.len()
            )));
        }
        for (i, a) in actions.iter().enumerate() {
            if a.iter().any(|c| !c.is_finite() || c.abs() > 1.0) {
                return Err(Error::contract(format!("action {a:?} of robot {i} outside [-1, 1]^2")));
            }
        }
        Ok(())
    }

    fn in_fov(&self, ego: &AgentState, other: Vec2) -> bool {
        let rel = other - ego.position;
        let dist = rel.norm();
        if dist > self.config.fov_range {
            return false;
        }
        if self.config.fov_angle >= TAU || dist == 0.0 {
            return true;
        }
        let bearing = wrap_angle(rel.y.atan2(rel.x) - ego.heading);
        bearing.abs() <= self.config.fov_angle / 2.0
    }

    /// Local observation of robot `robot_index`. Entries are ordered by agent id.
    pub fn sense(&self, robot_index: usize) -> Observation {
        let robot = &self.robots[robot_index];
        let s = &robot.state;
        let ego = [
            s.position.x,
            s.position.y,
            s.radius,
            s.goal.x - s.position.x,
            s.goal.y - s.position.y,
            s.v_pref,
            s.velocity.x,
            s.velocity.y,
            s.heading,
        ];
        let mut others = Vec::new();
        for other in &self.robots {
            if other.id == robot.id || !other.active || !self.in_fov(s, other.state.position) {
                continue;
            }
            others.push(SensedAgent {
                agent_id: other.id,
                kind: AgentKind::Robot,
                relative_position: other.state.position - s.position,
                perceived_radius: other.state.radius,
            });
        }
        for (k, ped) in self.pedestrians.iter().enumerate() {
            if !self.in_fov(s, ped.state.position) {
                continue;
            }
            others.push(SensedAgent {
                agent_id: ped.id,
                kind: AgentKind::Pedestrian,
                relative_position: ped.state.position - s.position,
                perceived_radius: self.perceived_radii[k],
            });
        }
        Observation {
            ego,
            others,
            timestamp: self.clock,
        }
    }

    fn proximity_with(&self, robot_index: usize, robot_present: &dyn Fn(&Robot) -> bool) -> ProximityReport {
        let robot = &self.robots[robot_index];
        let s = &robot.state;
        let mut report = ProximityReport::default();
        for other in &self.robots {
            if other.id == robot.id || !robot_present(other) || !self.in_fov(s, other.state.position) {
                continue;
            }
            let d = (other.state.position - s.position).norm() - s.radius - other.state.radius;
            report.d_rr.push((other.id, d));
        }
        for ped in &self.pedestrians {
            if !self.in_fov(s, ped.state.position) {
                continue;
            }
            let d = (ped.state.position - s.position).norm() - s.radius - ped.state.radius;
            report.d_rp.push((ped.id, d));
            if d < self.config.d_comfort {
                report.comfort_intrusion = true;
            }
        }
        report
    }

    /// Surface distances from robot `robot_index` to the robots and
    /// pedestrians in its field of view, using true radii.
    pub fn collision_check(&self, robot_index: usize) -> ProximityReport {
        self.proximity_with(robot_index, &|r| r.active)
    }

    /// One full environment transition: robots move, pedestrians move,
    /// goals may change, the clock advances and sensing noise is redrawn.
    pub fn advance(&mut self, actions: &[[f64; 2]]) -> Result<StepOutcome> {
        let was_active: Vec<bool> = self.robots.iter().map(|r| r.active).collect();
        self.robot_step(actions)?;
        self.sf_step();
        self.maybe_resample_goals();
        self.clock += 1;
        self.redraw_perceived_radii();

        let proximity: Vec<Option<ProximityReport>> = (0..self.robots.len())
            .map(|i| {
                was_active[i].then(|| {
                    self.proximity_with(i, &|r: &Robot| was_active[r.id])
                })
            })
            .collect();
        let collision = proximity.iter().flatten().any(ProximityReport::collision);

        let tol = self.config.goal_tolerance();
        let clock = self.clock;
        let mut reached_goal_now = vec![false; self.robots.len()];
        for (i, robot) in self.robots.iter_mut().enumerate() {
            if robot.active && (robot.state.goal - robot.state.position).norm() < tol {
                robot.active = false;
                robot.reached_goal = true;
                robot.retired_at = Some(clock);
                reached_goal_now[i] = true;
            }
        }
        let all_reached = self.robots.iter().all(|r| r.reached_goal);
        let timeout = self.clock >= self.config.max_timesteps;
        let terminate = collision && self.config.collision_mode == CollisionMode::Terminate;
        Ok(StepOutcome {
            proximity,
            reached_goal_now,
            collision,
            all_reached,
            timeout,
            done: all_reached || terminate || timeout,
        })
    }

    /// Log records for every agent present at the current clock. A robot is
    /// still logged on the step at which it reaches its goal.
    pub fn trajectory_records(&self) -> Vec<TrajectoryRecord> {
        let step = self.clock;
        let robots = self
            .robots
            .iter()
            .filter(|r| r.active || r.retired_at == Some(step))
            .map(|r| (r.id, AgentKind::Robot, &r.state));
        let peds = self.pedestrians.iter().map(|p| (p.id, AgentKind::Pedestrian, &p.state));
        robots
            .chain(peds)
            .map(|(agent_id, kind, s)| TrajectoryRecord {
                step,
                agent_id,
                kind,
                x: s.position.x,
                y: s.position.y,
                vx: s.velocity.x,
                vy: s.velocity.y,
                radius: s.radius,
            })
            .collect()
    }

    /// Bitwise digest of the full state, RNG positions included.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let put_state = |h: &mut DefaultHasher, s: &AgentState| {
            for v in [
                s.position.x,
                s.position.y,
                s.velocity.x,
                s.velocity.y,
                s.radius,
                s.goal.x,
                s.goal.y,
                s.v_pref,
                s.heading,
            ] {
                v.to_bits().hash(h);
            }
        };
        for r in &self.robots {
            put_state(&mut h, &r.state);
            (r.active, r.reached_goal, r.retired_at).hash(&mut h);
            r.displacement.x.to_bits().hash(&mut h);
            r.displacement.y.to_bits().hash(&mut h);
        }
        for p in &self.pedestrians {
            put_state(&mut h, &p.state);
            p.comfort_radius.to_bits().hash(&mut h);
            p.goal_change_prob.to_bits().hash(&mut h);
        }
        for r in &self.perceived_radii {
            r.to_bits().hash(&mut h);
        }
        (self.clock, self.goal_resampling).hash(&mut h);
        self.ped_rng.get_word_pos().hash(&mut h);
        self.noise_rng.get_word_pos().hash(&mut h);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world() -> WorldState {
        let cfg = WorldConfig {
            n_pedestrians: 0,
            n_robots: 1,
            ..WorldConfig::default()
        };
        WorldState::reset(&cfg, 1).unwrap()
    }

    fn lone_pedestrian(position: Vec2, goal: Vec2) -> WorldState {
        let cfg = WorldConfig {
            n_pedestrians: 1,
            n_robots: 0,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 3).unwrap();
        w.goal_resampling = false;
        let p = &mut w.pedestrians[0].state;
        p.position = position;
        p.goal = goal;
        p.velocity = Vec2::zeros();
        p.v_pref = 1.0;
        w
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = WorldConfig::default();
        let a = WorldState::reset(&cfg, 42).unwrap();
        let b = WorldState::reset(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = WorldState::reset(&cfg, 43).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn pedestrian_radii_stay_in_range() {
        let cfg = WorldConfig::default();
        for seed in 0..10_000 {
            let w = WorldState::reset(&cfg, seed).unwrap();
            for p in &w.pedestrians {
                assert!((0.5..=1.3).contains(&p.state.radius), "seed {seed}: {}", p.state.radius);
                assert!((0.5..=1.5).contains(&p.state.v_pref));
                assert!((0.2..=0.3).contains(&p.goal_change_prob));
            }
        }
    }

    #[test]
    fn overcrowded_scene_is_a_config_error() {
        let cfg = WorldConfig {
            n_pedestrians: 200,
            ..WorldConfig::default()
        };
        assert!(matches!(WorldState::reset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn initial_positions_do_not_overlap() {
        let cfg = WorldConfig {
            n_pedestrians: 10,
            scenario_radius: 8.0,
            ..WorldConfig::default()
        };
        for seed in 0..200 {
            let w = WorldState::reset(&cfg, seed).unwrap();
            let bodies: Vec<(Vec2, f64)> = w
                .robots
                .iter()
                .map(|r| (r.state.position, r.state.radius))
                .chain(w.pedestrians.iter().map(|p| (p.state.position, p.state.radius)))
                .collect();
            for i in 0..bodies.len() {
                for j in i + 1..bodies.len() {
                    assert!((bodies[i].0 - bodies[j].0).norm() > bodies[i].1 + bodies[j].1);
                }
            }
        }
    }

    #[test]
    fn pedestrian_at_goal_stays_put() {
        let mut w = lone_pedestrian(Vec2::new(1.0, 2.0), Vec2::new(1.0, 2.0));
        for _ in 0..20 {
            w.sf_step();
        }
        assert_eq!(w.pedestrians[0].state.position, Vec2::new(1.0, 2.0));
        assert_eq!(w.pedestrians[0].state.velocity, Vec2::zeros());
    }

    #[test]
    fn lone_pedestrian_speeds_up_toward_goal() {
        let mut w = lone_pedestrian(Vec2::new(-5.0, 0.0), Vec2::new(5.0, 0.0));
        let mut last = 0.0;
        for _ in 0..12 {
            w.sf_step();
            let v = w.pedestrians[0].state.velocity;
            assert!(v.y.abs() < 1e-15 && v.x > 0.0);
            assert!(v.x > last && v.x <= 1.0);
            last = v.x;
        }
        assert!(last > 0.99);
    }

    #[test]
    fn head_on_pedestrians_feel_opposite_forces() {
        let cfg = WorldConfig {
            n_pedestrians: 2,
            n_robots: 0,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 9).unwrap();
        w.goal_resampling = false;
        for (k, x) in [(0, -3.0), (1, 3.0)] {
            let p = &mut w.pedestrians[k];
            p.state.position = Vec2::new(x, 0.0);
            p.state.goal = Vec2::new(-x, 0.0);
            p.state.velocity = Vec2::zeros();
            p.state.radius = 0.8;
            p.state.v_pref = 1.2;
        }
        for _ in 0..40 {
            let (a, b) = (w.pedestrians[0].state, w.pedestrians[1].state);
            let params = w.config.social_force;
            let fa = social_force::pair_repulsion(a.position, a.radius, b.position, b.radius, &params);
            let fb = social_force::pair_repulsion(b.position, b.radius, a.position, a.radius, &params);
            assert!((fa + fb).norm() <= 1e-12 * fa.norm().max(1.0));
            w.sf_step();
            let (a, b) = (w.pedestrians[0].state, w.pedestrians[1].state);
            assert!((a.position + b.position).norm() < 1e-12);
        }
    }

    #[test]
    fn goal_resampling_respects_probability_extremes() {
        let cfg = WorldConfig {
            n_robots: 0,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 5).unwrap();
        for p in &mut w.pedestrians {
            p.goal_change_prob = 0.0;
        }
        let goals: Vec<Vec2> = w.pedestrians.iter().map(|p| p.state.goal).collect();
        for _ in 0..100 {
            w.maybe_resample_goals();
        }
        assert_eq!(goals, w.pedestrians.iter().map(|p| p.state.goal).collect::<Vec<_>>());

        w.config.pedestrian.goal_change_window = 1.0;
        for p in &mut w.pedestrians {
            p.goal_change_prob = 1.0;
        }
        for _ in 0..20 {
            let before: Vec<Vec2> = w.pedestrians.iter().map(|p| p.state.goal).collect();
            w.maybe_resample_goals();
            for (b, p) in before.iter().zip(&w.pedestrians) {
                assert_ne!(*b, p.state.goal);
                assert!((p.state.goal.norm() - w.config.scenario_radius).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn goal_change_rate_matches_probability() {
        let cfg = WorldConfig {
            n_pedestrians: 1,
            n_robots: 0,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 11).unwrap();
        w.config.pedestrian.goal_change_window = 1.0;
        w.pedestrians[0].goal_change_prob = 0.25;
        let mut changes = 0;
        for _ in 0..10_000 {
            let before = w.pedestrians[0].state.goal;
            w.maybe_resample_goals();
            if w.pedestrians[0].state.goal != before {
                changes += 1;
            }
        }
        let rate = changes as f64 / 10_000.0;
        assert!((rate - 0.25).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn robot_step_scales_actions() {
        let mut w = empty_world();
        let p0 = w.robots[0].state.position;
        w.robot_step(&[[0.0, 0.0]]).unwrap();
        assert_eq!(w.robots[0].state.position, p0);
        w.robot_step(&[[1.0, 0.0]]).unwrap();
        assert!((w.robots[0].state.position.x - p0.x - 0.25).abs() < 1e-12);
        assert_eq!(w.robots[0].state.heading, 0.0);
        assert!(matches!(w.robot_step(&[[1.5, 0.0]]), Err(Error::Contract(_))));
        assert!(matches!(w.robot_step(&[[f64::NAN, 0.0]]), Err(Error::Contract(_))));
    }

    #[test]
    fn sensing_respects_range_and_noise() {
        let cfg = WorldConfig {
            n_pedestrians: 2,
            n_robots: 1,
            radius_noise_scale: 0.0,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 2).unwrap();
        w.robots[0].state.position = Vec2::zeros();
        w.pedestrians[0].state.position = Vec2::new(20.0, 0.0);
        w.pedestrians[1].state.position = Vec2::new(3.0, 4.0);
        let obs = w.sense(0);
        assert_eq!(obs.others.len(), 1);
        assert_eq!(obs.others[0].agent_id, w.pedestrians[1].id);
        assert_eq!(obs.others[0].relative_position, Vec2::new(3.0, 4.0));
        assert_eq!(obs.others[0].perceived_radius, w.pedestrians[1].state.radius);

        let lonely = empty_world().sense(0);
        assert!(lonely.others.is_empty());
        assert_eq!(lonely.ego.len(), 9);
    }

    #[test]
    fn perceived_radius_noise_is_bounded() {
        let cfg = WorldConfig::default();
        let mut w = WorldState::reset(&cfg, 4).unwrap();
        for _ in 0..50 {
            w.advance(&[[0.0, 0.0]; 3]).unwrap();
            for (p, r) in w.pedestrians.iter().zip(&w.perceived_radii) {
                assert!((p.state.radius - r).abs() <= 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn surface_distances_and_comfort() {
        let cfg = WorldConfig {
            n_pedestrians: 1,
            n_robots: 2,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 6).unwrap();
        w.robots[0].state.position = Vec2::zeros();
        w.robots[1].state.position = Vec2::new(1.2, 0.0);
        let ped = &mut w.pedestrians[0].state;
        ped.radius = 0.5;
        ped.position = Vec2::new(0.0, 0.6 + 0.5 + 0.2);
        let rep = w.collision_check(0);
        assert!(rep.d_rr[0].1.abs() < 1e-12);
        assert!((rep.d_rp[0].1 - 0.2).abs() < 1e-12);
        assert!(rep.comfort_intrusion);
        assert!(!rep.collision());

        w.pedestrians[0].state.position = Vec2::new(0.0, 0.9);
        let rep = w.collision_check(0);
        assert!(rep.d_rp[0].1 < 0.0);
        assert!(rep.collision());
    }

    #[test]
    fn collision_distance_is_symmetric() {
        let cfg = WorldConfig::default();
        let mut w = WorldState::reset(&cfg, 8).unwrap();
        w.robots[0].state.position = Vec2::new(0.3, -1.1);
        w.robots[1].state.position = Vec2::new(2.9, 0.4);
        let r0 = w.collision_check(0);
        let r1 = w.collision_check(1);
        let d01 = r0.d_rr.iter().find(|(id, _)| *id == 1).unwrap().1;
        let d10 = r1.d_rr.iter().find(|(id, _)| *id == 0).unwrap().1;
        assert_eq!(d01, d10);
    }

    #[test]
    fn episode_times_out() {
        let cfg = WorldConfig {
            max_timesteps: 5,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 1).unwrap();
        let mut done = false;
        for _ in 0..5 {
            let out = w.advance(&[[0.0, 0.0]; 3]).unwrap();
            done = out.done;
            if out.collision {
                return;
            }
        }
        assert!(done);
    }

    #[test]
    fn narrow_fov_cuts_behind() {
        let cfg = WorldConfig {
            n_pedestrians: 1,
            n_robots: 1,
            fov_angle: PI,
            ..WorldConfig::default()
        };
        let mut w = WorldState::reset(&cfg, 2).unwrap();
        w.robots[0].state.position = Vec2::zeros();
        w.robots[0].state.heading = 0.0;
        w.pedestrians[0].state.position = Vec2::new(-3.0, 0.0);
        assert!(w.sense(0).others.is_empty());
        w.pedestrians[0].state.position = Vec2::new(3.0, 0.5);
        assert_eq!(w.sense(0).others.len(), 1);
    }
}
