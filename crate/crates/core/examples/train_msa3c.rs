//! A short training run with small networks: staged rewards, warm-up
//! exploration, periodic evaluation and a resumable checkpoint.
//!
//! Pass a directory to keep the run; otherwise a temporary one is used.

use msa3c::encoder::EncoderConfig;
use msa3c::harness::run_training;
use msa3c::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.max_timesteps = 60;
    cfg.encoder = EncoderConfig::uniform(16, 2);
    cfg.learner.batch_size = 16;
    cfg.learner.critic_hidden = 16;
    cfg.learner.policy_hidden = 16;
    cfg.replay.capacity = 5_000;
    cfg.reward.stage2_start_episode = 20;
    cfg.training.episodes = 40;
    cfg.training.warmup_episodes = 5;
    cfg.training.updates_per_episode = 4;
    cfg.training.checkpoint_every = 20;
    cfg.training.eval_every = 20;
    cfg.training.eval_episodes = 5;

    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let summary = run_training(&cfg, &out, false, |s| {
        if s.episode % 5 == 4 {
            println!(
                "episode {:>3}  stage {}  return {:>8.3}  critic {:>8}  alpha {:.4}",
                s.episode,
                s.stage,
                s.team_return,
                s.critic_loss.map_or("-".into(), |c| format!("{c:.4}")),
                s.alpha
            );
        }
    })?;
    for (ep, r) in &summary.evaluations {
        println!("eval after {:>3}: CSR {:.0}%  CR {:.1}  CIR {:.2}%", ep + 1, r.csr, r.cr, r.cir);
    }
    println!("{} updates; checkpoint in {}", summary.learner.updates, out.join("checkpoint").display());
    Ok(())
}
