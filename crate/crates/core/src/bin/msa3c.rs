use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msa3c::harness::{self, Agent, PolicyKind};
use msa3c::learner::{ActionMode, Msa3c};
use msa3c::{Error, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "msa3c", about = "Train and evaluate multi-robot crowd navigation policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training or evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    /// Overrides the episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned policy; checkpoints and logs go to --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Run the seeded evaluation battery; writes metrics.json and logs.ndjson.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Learner checkpoint, required for learned policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recompute metrics from trajectory logs.
    Metrics {
        #[arg(long)]
        logs: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one SVG per logged episode.
    Plot {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = common.policy {
        cfg.policy = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.training.seed = s;
            }
            if let Some(n) = common.episodes {
                cfg.training.episodes = n;
            }
            let every = (cfg.training.episodes / 100).max(1);
            let summary = harness::run_training(&cfg, &common.out, resume, |s| {
                if (s.episode + 1) % every == 0 {
                    eprintln!(
                        "episode {:>6}  stage {}  return {:>8.3}  steps {:>3}  success {}  alpha {:.4}",
                        s.episode, s.stage, s.team_return, s.steps, s.success, s.alpha
                    );
                }
            })?;
            eprintln!(
                "trained {} episodes, {} updates -> {}",
                summary.stats.len(),
                summary.learner.updates,
                common.out.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.evaluation.seed = s;
            }
            let episodes = common.episodes.unwrap_or(cfg.evaluation.episodes);
            let learner = match (cfg.policy.is_learned(), &checkpoint) {
                (true, Some(p)) => Some(Msa3c::load(p)?),
                (true, None) => {
                    return Err(Error::Config(format!(
                        "policy `{}` needs --checkpoint",
                        cfg.policy.name()
                    )))
                }
                (false, _) => None,
            };
            let mode = if cfg.evaluation.deterministic {
                ActionMode::Deterministic
            } else {
                ActionMode::Stochastic
            };
            let agent = match cfg.policy {
                PolicyKind::Orca => Agent::Orca(&cfg.orca),
                PolicyKind::Sf => Agent::SocialForce(&cfg.world.social_force),
                PolicyKind::Random => Agent::Random,
                PolicyKind::Msa3c | PolicyKind::Msa3cPred => Agent::Learned {
                    learner: learner.as_ref().expect("loaded above"),
                    mode,
                },
            };
            let out = harness::run_evaluation(&cfg, agent, cfg.policy.name(), episodes)?;
            write_json(&common.out.join("metrics.json"), &out.report)?;
            if cfg.evaluation.keep_logs {
                harness::write_logs(&common.out.join("logs.ndjson"), &out.logs)?;
            }
            println!("{}", serde_json::to_string_pretty(&out.report).expect("report serialises"));
        }
        Command::Metrics { logs, out } => {
            let report = harness::compute_metrics(&harness::read_logs(&logs)?);
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serialises")),
            }
        }
        Command::Plot { logs, out } => {
            let written = harness::emit_plots(&harness::read_logs(&logs)?, &out)?;
            eprintln!("wrote {} plot(s) to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
