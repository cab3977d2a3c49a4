//! Collects one exploratory episode, cuts it into fixed-length segments,
//! stores them in the replay ring and packs a sampled batch for training.

use msa3c::encoder::EncoderConfig;
use msa3c::harness::{run_episode, Agent};
use msa3c::learner::{LearnerConfig, Msa3c};
use msa3c::replay::{pack_segments, ReplayBuffer, ReplayConfig};
use msa3c::reward::RewardSchedule;
use msa3c::{CrowdEnv, WorldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> msa3c::Result<()> {
    let world = WorldConfig {
        max_timesteps: 47,
        ..WorldConfig::default()
    };
    let schedule = RewardSchedule::default();
    let mut env = CrowdEnv::new(world.clone(), schedule.config_for(0, &world), schedule.predictor)?;
    let learner = Msa3c::new(&EncoderConfig::uniform(16, 2), &LearnerConfig::default(), world.n_robots, 0)?;

    let replay = ReplayConfig {
        capacity: 8,
        segment_len: 10,
    };
    let mut buffer = ReplayBuffer::new(&replay);
    for ep in 0..3 {
        let out = run_episode(&mut env, Agent::Exploring(&learner), ep, 100 + ep as u64, Some(replay.segment_len), "random", "-")?;
        let added = buffer.push_episode(out.trajectory.as_ref().expect("collected"))?;
        println!("episode {ep}: {} steps -> {added} segments (buffer holds {})", out.steps, buffer.len());
    }
    for s in buffer.segments() {
        println!(
            "  segment {:>2}.{}  valid steps {:>2}  padded {:?}",
            s.tag >> 16,
            s.tag & 0xffff,
            s.valid.iter().filter(|&&v| v).count(),
            s.padding
        );
    }

    let sample = buffer.sample(4, &mut ChaCha8Rng::seed_from_u64(1))?;
    let batch = pack_segments(&sample)?;
    println!(
        "packed batch: {} segments x {} robots = {} encoder rows over {} observations",
        batch.n_segments,
        batch.n_robots,
        batch.padded.batch,
        batch.padded.time
    );
    Ok(())
}
