//! Steps the crowd simulator with goal-seeking commands and prints the team
//! reward along the way.

use msa3c::reward::RewardSchedule;
use msa3c::{CrowdEnv, WorldConfig};

fn main() -> msa3c::Result<()> {
    let world = WorldConfig::default();
    let schedule = RewardSchedule::default();
    let mut env = CrowdEnv::new(world.clone(), schedule.config_for(0, &world), schedule.predictor)?;
    let mut obs = env.reset(7)?;
    println!(
        "{} robots, {} pedestrians on a {:.0} m circle",
        world.n_robots, world.n_pedestrians, world.scenario_radius
    );

    loop {
        // head straight for the goal at full speed (ego[3..5] is the goal offset)
        let actions: Vec<[f64; 2]> = obs
            .iter()
            .map(|o| {
                let (dx, dy) = (o.ego[3], o.ego[4]);
                let n = dx.hypot(dy).max(1e-9);
                [dx / n, dy / n]
            })
            .collect();
        let step = env.step(&actions)?;
        let clock = env.world().clock;
        if clock % 10 == 0 || step.done {
            println!(
                "t={clock:>3}  team reward {:>8.4}  active {:?}  collided {:?}",
                step.team_reward, step.active, step.collided
            );
        }
        if step.done {
            println!("done: collision={} timeout={} all reached={}", step.collision, step.timeout, step.reached_goal.iter().all(|&r| r));
            break;
        }
        obs = step.observations;
    }
    Ok(())
}
