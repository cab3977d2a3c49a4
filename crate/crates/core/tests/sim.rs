use msa3c::sim::{AgentKind, CollisionMode};
use msa3c::{WorldConfig, WorldState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_actions(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        .collect()
}

fn continuing() -> WorldConfig {
    WorldConfig {
        collision_mode: CollisionMode::Continue,
        ..WorldConfig::default()
    }
}

#[test]
fn same_seed_and_actions_replay_bit_for_bit() {
    let cfg = continuing();
    let mut a = WorldState::reset(&cfg, 5).unwrap();
    let mut b = WorldState::reset(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..150 {
        let act = random_actions(&mut rng, 3);
        let oa = a.advance(&act).unwrap();
        let ob = b.advance(&act).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.trajectory_records(), b.trajectory_records());
    }
}

#[test]
fn different_seeds_give_different_scenes() {
    let cfg = WorldConfig::default();
    let a = WorldState::reset(&cfg, 1).unwrap();
    let b = WorldState::reset(&cfg, 2).unwrap();
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn goals_sit_across_the_circle() {
    let cfg = WorldConfig::default();
    for seed in 0..20 {
        let w = WorldState::reset(&cfg, seed).unwrap();
        for r in &w.robots {
            let s = &r.state;
            // Start and goal lie roughly antipodal on the scenario circle.
            assert!((s.goal - s.position).norm() > cfg.scenario_radius);
            assert!(s.position.norm() < cfg.scenario_radius + 1.0);
        }
    }
}

#[test]
fn retired_robots_vanish_from_sensing_and_logs() {
    let cfg = WorldConfig {
        n_pedestrians: 0,
        n_robots: 2,
        ..continuing()
    };
    let mut w = WorldState::reset(&cfg, 3).unwrap();
    // Park robot 0 next to its goal.
    w.robots[0].state.position = w.robots[0].state.goal + nalgebra::Vector2::new(0.1, 0.0);
    let out = w.advance(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
    assert!(out.reached_goal_now[0] && !w.robots[0].active);
    let at_retire = w.trajectory_records();
    assert!(at_retire.iter().any(|r| r.agent_id == 0), "logged on the retiring step");
    assert!(w.sense(1).others.iter().all(|o| o.agent_id != 0));
    w.advance(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
    assert!(w.trajectory_records().iter().all(|r| r.agent_id != 0));
}

#[test]
fn terminate_mode_ends_on_first_collision() {
    let cfg = WorldConfig {
        n_pedestrians: 0,
        n_robots: 2,
        ..WorldConfig::default()
    };
    let mut w = WorldState::reset(&cfg, 4).unwrap();
    w.robots[1].state.position = w.robots[0].state.position + nalgebra::Vector2::new(0.5, 0.0);
    let out = w.advance(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
    assert!(out.collision && out.done);
    let mut c = WorldState::reset(&WorldConfig { collision_mode: CollisionMode::Continue, ..cfg }, 4).unwrap();
    c.robots[1].state.position = c.robots[0].state.position + nalgebra::Vector2::new(0.5, 0.0);
    let out = c.advance(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
    assert!(out.collision && !out.done);
}

#[test]
fn records_cover_every_present_agent() {
    let cfg = WorldConfig::default();
    let w = WorldState::reset(&cfg, 8).unwrap();
    let recs = w.trajectory_records();
    assert_eq!(recs.iter().filter(|r| r.kind == AgentKind::Robot).count(), 3);
    assert_eq!(recs.iter().filter(|r| r.kind == AgentKind::Pedestrian).count(), 5);
    assert!(recs.iter().all(|r| r.step == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pedestrians_ignore_robots(seed in 0u64..10_000, steps in 1usize..60) {
        let with = continuing();
        let without = WorldConfig { n_robots: 0, ..with.clone() };
        let mut a = WorldState::reset(&with, seed).unwrap();
        let mut b = WorldState::reset(&without, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            a.advance(&random_actions(&mut rng, 3)).unwrap();
            b.advance(&[]).unwrap();
        }
        for (p, q) in a.pedestrians.iter().zip(&b.pedestrians) {
            prop_assert_eq!(p.state.position, q.state.position);
            prop_assert_eq!(p.state.velocity, q.state.velocity);
        }
    }

    #[test]
    fn pedestrian_speed_stays_capped(seed in 0u64..10_000) {
        let cfg = continuing();
        let mut w = WorldState::reset(&cfg, seed).unwrap();
        let cap = cfg.social_force.speed_cap_factor;
        for _ in 0..100 {
            w.advance(&[[0.0, 0.0]; 3]).unwrap();
            for p in &w.pedestrians {
                prop_assert!(p.state.velocity.norm() <= cap * p.state.v_pref + 1e-9);
                prop_assert!(p.state.position.x.is_finite() && p.state.position.y.is_finite());
            }
        }
    }

    #[test]
    fn clock_advances_and_episode_times_out(seed in 0u64..10_000) {
        let cfg = WorldConfig { max_timesteps: 20, ..continuing() };
        let mut w = WorldState::reset(&cfg, seed).unwrap();
        for k in 1..=20 {
            let out = w.advance(&[[0.0, 0.0]; 3]).unwrap();
            prop_assert_eq!(w.clock, k);
            prop_assert_eq!(out.timeout, k == 20);
        }
    }

    #[test]
    fn sensing_is_limited_to_the_field_of_view(seed in 0u64..10_000, range in 1.0f64..8.0) {
        let cfg = WorldConfig { fov_range: range, ..WorldConfig::default() };
        let w = WorldState::reset(&cfg, seed).unwrap();
        for i in 0..3 {
            let obs = w.sense(i);
            for o in &obs.others {
                prop_assert!(o.relative_position.norm() <= range + 1e-12);
            }
            let ids: Vec<usize> = obs.others.iter().map(|o| o.agent_id).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            prop_assert_eq!(ids, sorted);
        }
    }
}
