use msa3c::baselines::{
    orca_half_plane, orca_neighbors, orca_step, sf_robot_step, solve_orca, velocity_to_action, HalfPlane, OrcaConfig,
    OrcaNeighbor,
};
use msa3c::{Vec2, WorldConfig, WorldState};
use proptest::prelude::*;

fn det(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn rot(v: Vec2, a: f64) -> Vec2 {
    let (s, c) = a.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn crowd(seed: u64) -> WorldState {
    let cfg = WorldConfig {
        n_robots: 2,
        n_pedestrians: 6,
        fov_angle: std::f64::consts::TAU,
        ..WorldConfig::default()
    };
    WorldState::reset(&cfg, seed).unwrap()
}

#[test]
fn neighbours_beyond_range_are_ignored() {
    for seed in 0..40 {
        let w = crowd(seed);
        let orca = OrcaConfig {
            neighbor_range: Some(3.0),
            ..OrcaConfig::default()
        };
        let me = w.robots[0].state.position;
        let want: usize = w.robots[1..]
            .iter()
            .map(|r| r.state.position)
            .chain(w.pedestrians.iter().map(|p| p.state.position))
            .filter(|p| (p - me).norm() <= 3.0)
            .count();
        let got = orca_neighbors(0, &w, &orca);
        assert_eq!(got.len(), want);
        assert!(got.iter().all(|n| (n.position - me).norm() <= 3.0));
    }
}

#[test]
fn pedestrians_carry_full_responsibility_robots_half() {
    let mut w = crowd(3);
    w.config.fov_range = 100.0;
    let orca = OrcaConfig {
        neighbor_range: Some(100.0),
        ..OrcaConfig::default()
    };
    let n = orca_neighbors(0, &w, &orca);
    let robots = n.iter().filter(|x| x.responsibility == 0.5).count();
    let peds = n.iter().filter(|x| x.responsibility == 1.0).count();
    assert_eq!((robots, peds), (1, 6));
}

#[test]
fn head_on_pair_turns_the_same_way() {
    // Each robot sidesteps to its own right (or left): mirrored velocities.
    let cfg = WorldConfig {
        n_robots: 2,
        n_pedestrians: 0,
        ..WorldConfig::default()
    };
    let mut w = WorldState::reset(&cfg, 0).unwrap();
    for (r, x) in w.robots.iter_mut().zip([-2.0, 2.0]) {
        r.state.position = Vec2::new(x, 0.0);
        r.state.goal = Vec2::new(-x, 0.0);
        r.state.velocity = Vec2::new(-x.signum(), 0.0);
        r.state.heading = if x < 0.0 { 0.0 } else { std::f64::consts::PI };
    }
    let orca = OrcaConfig::default();
    let v0 = orca_step(0, &w, &orca);
    let v1 = orca_step(1, &w, &orca);
    assert!((v0 + v1).norm() < 1e-12);
    assert!(v0.y.abs() > 1e-3, "no sidestep: {v0:?}");
}

#[test]
fn sf_robot_slows_for_a_pedestrian_ahead() {
    let cfg = WorldConfig {
        n_robots: 1,
        n_pedestrians: 1,
        ..WorldConfig::default()
    };
    let mut w = WorldState::reset(&cfg, 0).unwrap();
    let r = &mut w.robots[0].state;
    r.position = Vec2::new(0.0, 0.0);
    r.goal = Vec2::new(5.0, 0.0);
    r.velocity = Vec2::new(1.0, 0.0);
    r.heading = 0.0;
    w.pedestrians[0].state.position = Vec2::new(0.9, 0.0);
    let blocked = sf_robot_step(0, &w, &w.config.social_force);
    w.pedestrians[0].state.position = Vec2::new(0.0, 30.0);
    let free = sf_robot_step(0, &w, &w.config.social_force);
    assert!(blocked.x < free.x);
}

#[test]
fn velocity_commands_are_clamped() {
    assert_eq!(velocity_to_action(Vec2::new(0.5, -0.25), 1.0), [0.5, -0.25]);
    assert_eq!(velocity_to_action(Vec2::new(3.0, -3.0), 1.0), [1.0, -1.0]);
}

fn neighbour() -> impl Strategy<Value = OrcaNeighbor> {
    (1.0f64..6.0, 0.0..std::f64::consts::TAU, -1.0f64..1.0, -1.0f64..1.0, 0.2f64..0.5, prop_oneof![Just(0.5), Just(1.0)])
        .prop_map(|(d, a, vx, vy, radius, responsibility)| OrcaNeighbor {
            position: Vec2::new(d * a.cos(), d * a.sin()),
            velocity: Vec2::new(vx, vy),
            radius,
            responsibility,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn solution_stays_inside_the_speed_disc(
        ns in proptest::collection::vec(neighbour(), 0..6),
        px in -2.0f64..2.0, py in -2.0f64..2.0,
    ) {
        let lines: Vec<HalfPlane> = ns
            .iter()
            .map(|n| orca_half_plane(Vec2::zeros(), Vec2::new(0.5, 0.0), 0.65, n, 3.0, 0.25))
            .collect();
        let v = solve_orca(&lines, 1.2, Vec2::new(px, py));
        prop_assert!(v.norm() <= 1.2 + 1e-9);
    }

    #[test]
    fn lone_constraint_is_honoured_when_reachable(n in neighbour(), vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let line = orca_half_plane(Vec2::zeros(), Vec2::new(vx, vy), 0.65, &n, 3.0, 0.25);
        let v = solve_orca(&[line], 1.0, Vec2::new(1.0, 0.0));
        if det(line.direction, -line.point) >= -1.0 {
            prop_assert!(det(line.direction, v - line.point) >= -1e-9);
        }
    }

    #[test]
    fn constraints_rotate_with_the_scene(n in neighbour(), vx in -1.0f64..1.0, vy in -1.0f64..1.0, a in 0.0..std::f64::consts::TAU) {
        let v = Vec2::new(vx, vy);
        let line = orca_half_plane(Vec2::zeros(), v, 0.65, &n, 3.0, 0.25);
        let turned = OrcaNeighbor {
            position: rot(n.position, a),
            velocity: rot(n.velocity, a),
            ..n
        };
        let line_r = orca_half_plane(Vec2::zeros(), rot(v, a), 0.65, &turned, 3.0, 0.25);
        prop_assert!((line_r.direction - rot(line.direction, a)).norm() < 1e-9);
        // same line: the rotated point lies on it
        prop_assert!(det(line_r.direction, rot(line.point, a) - line_r.point).abs() < 1e-9);
    }

    #[test]
    fn sf_robot_never_exceeds_its_preferred_speed(seed in 0u64..10_000) {
        let w = crowd(seed);
        for i in 0..2 {
            prop_assert!(sf_robot_step(i, &w, &w.config.social_force).norm() <= w.robots[i].state.v_pref + 1e-12);
        }
    }
}
