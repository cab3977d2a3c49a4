//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use candle_core::{DType, Tensor, Var};
use msa3c::encoder::{EncoderConfig, RawStep, SlotEntry, StoredHidden, EGO_DIM};
use msa3c::harness::{run_episode, Agent};
use msa3c::learner::{LearnerConfig, Msa3c, Precision};
use msa3c::replay::{pack_segments, segment_episode, EpisodeTrajectory, RolloutSegment, TrainingBatch, Transition};
use msa3c::reward::RewardSchedule;
use msa3c::{CrowdEnv, ExperimentConfig, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn load_preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&workspace_root().join("configs").join(name)).expect("preset parses")
}

/// Small double-precision learner for mechanics and gradient checks.
pub fn mini_learner(n_robots: usize, seed: u64) -> Msa3c {
    let enc = EncoderConfig::uniform(8, 2);
    let cfg = LearnerConfig {
        batch_size: 4,
        critic_hidden: 8,
        critic_heads: 2,
        policy_hidden: 8,
        precision: Precision::F64,
        ..LearnerConfig::default()
    };
    Msa3c::new(&enc, &cfg, n_robots, seed).expect("mini learner builds")
}

pub fn small_world() -> WorldConfig {
    WorldConfig {
        n_pedestrians: 3,
        n_robots: 2,
        max_timesteps: 23,
        ..WorldConfig::default()
    }
}

/// Collects exploring episodes with `learner` and returns their segments.
pub fn collect_segments(learner: &Msa3c, world: &WorldConfig, episodes: usize, seed: u64) -> Vec<RolloutSegment> {
    let schedule = RewardSchedule {
        stage2_start_episode: 0,
        ..RewardSchedule::default()
    };
    let mut env = CrowdEnv::new(world.clone(), schedule.config_for(0, world), schedule.predictor).unwrap();
    let mut out = Vec::new();
    for k in 0..episodes {
        let o = run_episode(&mut env, Agent::Exploring(learner), k, seed + k as u64, Some(10), "test", "fp").unwrap();
        out.extend(segment_episode(o.trajectory.as_ref().unwrap()).unwrap());
    }
    out
}

pub fn collect_batch(learner: &Msa3c, world: &WorldConfig, episodes: usize, seed: u64) -> TrainingBatch {
    pack_segments(&collect_segments(learner, world, episodes, seed)).unwrap()
}

pub fn random_step(rng: &mut ChaCha8Rng, slots: usize) -> RawStep {
    let mut ego = [0.0; EGO_DIM];
    for v in &mut ego {
        *v = rng.random_range(-3.0..3.0);
    }
    let mut others = Vec::new();
    for slot in 0..slots {
        if rng.random_bool(0.6) {
            others.push(SlotEntry {
                slot,
                relative_position: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            });
        }
    }
    RawStep {
        ego,
        ego_delta: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
        others,
        valid: true,
    }
}

/// Synthetic trajectory of `len` transitions with random content.
pub fn synthetic_trajectory(len: usize, n_robots: usize, seed: u64, enc: &EncoderConfig) -> EpisodeTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = 4;
    let mut traj = EpisodeTrajectory::new(n_robots, 10, seed);
    for t in 0..len {
        let hidden = traj
            .needs_hidden()
            .then(|| vec![StoredHidden::zeros(capacity, enc); n_robots]);
        let tr = Transition {
            steps: (0..n_robots).map(|_| random_step(&mut rng, capacity)).collect(),
            actions: (0..n_robots)
                .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                .collect(),
            rewards: (0..n_robots).map(|_| rng.random_range(-1.0..0.0)).collect(),
            active: vec![true; n_robots],
            terminal: vec![t + 1 == len; n_robots],
        };
        traj.push(tr, hidden).unwrap();
    }
    let final_steps = (0..n_robots).map(|_| random_step(&mut rng, capacity)).collect();
    traj.finish(final_steps, vec![false; n_robots]).unwrap();
    traj
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    values(t)[0]
}

/// Random unit-scale direction, one tensor per variable.
pub fn random_direction(vars: &[Var], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vars.iter()
        .map(|v| msa3c::learner::standard_normal(v.dims(), v.dtype(), rng).unwrap())
        .collect()
}

/// Central-difference derivative of `f` along `dir`, restoring the variables.
pub fn directional_fd(vars: &[Var], dir: &[Tensor], h: f64, mut f: impl FnMut() -> f64) -> f64 {
    let originals: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().copy().unwrap()).collect();
    let shift = |sign: f64| {
        for ((v, o), d) in vars.iter().zip(&originals).zip(dir) {
            v.set(&(o + (d * (sign * h)).unwrap()).unwrap()).unwrap();
        }
    };
    shift(1.0);
    let plus = f();
    shift(-1.0);
    let minus = f();
    for (v, o) in vars.iter().zip(&originals) {
        v.set(o).unwrap();
    }
    (plus - minus) / (2.0 * h)
}

/// `<grad, dir>` from an autodiff gradient store.
pub fn directional_analytic(vars: &[Var], dir: &[Tensor], grads: &candle_core::backprop::GradStore) -> f64 {
    vars.iter()
        .zip(dir)
        .map(|(v, d)| match grads.get(v.as_tensor()) {
            Some(g) => scalar(&(g * d).unwrap().sum_all().unwrap()),
            None => 0.0,
        })
        .sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Trailing moving average.
pub fn smooth(v: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= window {
            acc -= v[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// A training run small enough for a test: a handful of short episodes.
pub fn tiny_experiment(episodes: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.world = small_world();
    c.encoder = EncoderConfig::uniform(8, 2);
    c.learner = LearnerConfig {
        batch_size: 4,
        critic_hidden: 8,
        critic_heads: 2,
        policy_hidden: 8,
        ..LearnerConfig::default()
    };
    c.replay.capacity = 1000;
    c.reward.stage2_start_episode = 6;
    c.training.episodes = episodes;
    c.training.warmup_episodes = 3;
    c.training.updates_per_episode = 2;
    c.training.checkpoint_every = 5;
    c.training.eval_every = 4;
    c.training.eval_episodes = 2;
    c.evaluation.episodes = 4;
    c
}
