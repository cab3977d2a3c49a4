//! Lookahead comfort penalty for a robot facing an oncoming pedestrian:
//! the sooner a command would bring it into the comfort zone, the larger
//! the penalty.

use msa3c::reward::{first_intrusion_step, k_step_reward, predict_constant_velocity, PedestrianSnapshot, RewardSchedule};
use msa3c::sim::AgentState;
use msa3c::{Vec2, WorldConfig};

fn main() -> msa3c::Result<()> {
    let world = WorldConfig::default();
    let schedule = RewardSchedule::default();
    let cfg = schedule.config_for(schedule.stage2_start_episode, &world);

    let robot = AgentState {
        position: Vec2::new(0.0, 0.0),
        velocity: Vec2::zeros(),
        radius: 0.3,
        goal: Vec2::new(6.0, 0.0),
        v_pref: 1.0,
        heading: 0.0,
    };
    let ped = PedestrianSnapshot {
        id: 3,
        position: Vec2::new(2.0, 0.0),
        velocity: Vec2::new(-1.0, 0.0),
        radius: 0.3,
    };
    let predictions = predict_constant_velocity(&[ped], cfg.lookahead_steps, cfg.dt);

    println!("K = {}, d_comfort = {} m", cfg.lookahead_steps, cfg.d_comfort);
    for (name, action) in [
        ("straight ahead", [1.0, 0.0]),
        ("half speed", [0.5, 0.0]),
        ("stand still", [0.0, 0.0]),
        ("veer left", [0.3, 1.0]),
        ("retreat", [-1.0, 0.0]),
    ] {
        let k = first_intrusion_step(&robot, action, &predictions.tracks[0], &cfg);
        let r = k_step_reward(&robot, action, &predictions, &cfg)?;
        println!("{name:>15}: first intrusion {k:?}, penalty {r:.4}");
    }
    Ok(())
}
