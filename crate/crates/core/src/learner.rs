//! Centralised-critic, decentralised-actor soft actor-critic with parameter
//! sharing across robots.
//!
//! * The social encoder turns each robot's observation stream into a
//!   feature; it is trained through the critic loss only.
//! * Twin critics score the joint action. Each robot's head embeds its own
//!   (feature, action) pair and attends over the embeddings of the other
//!   robots still in the scene; a concatenation aggregator is available as
//!   an ablation.
//! * The actor is a tanh-squashed Gaussian on the (detached) social feature.
//! * Targets (critics and encoder) follow by Polyak averaging; the actor and
//!   temperature update every `policy_delay` critic updates.

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{execution_inputs, EncoderConfig, HiddenStates, RawStep, SocialEncoder};
use crate::error::{Error, Result};
use crate::nn::{self, leaky_relu, softplus, Adam, Dense, Linear, ParamStore};
use crate::replay::{pack_segments, ReplayBuffer, TrainingBatch};

const CONTAINER_KIND: &str = "msa3c-learner";
const STREAM_INIT: u64 = 11;
const STREAM_UPDATE: u64 = 1 << 32;
const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// Scaled dot-product attention over the other robots.
    Attention,
    /// Other robots' embeddings concatenated in id order.
    Concatenation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample `tanh(mu + sigma * eps)`.
    Stochastic,
    /// Return `tanh(mu)`.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub policy_delay: usize,
    pub alpha_init: f64,
    /// Defaults to minus the action dimensionality.
    pub target_entropy: Option<f64>,
    pub grad_clip: Option<f64>,
    pub critic: CriticKind,
    pub critic_hidden: usize,
    pub critic_heads: usize,
    pub policy_hidden: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub precision: Precision,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.01,
            lr: 5e-4,
            batch_size: 256,
            policy_delay: 2,
            alpha_init: 0.02,
            target_entropy: None,
            grad_clip: Some(10.0),
            critic: CriticKind::Attention,
            critic_hidden: 128,
            critic_heads: 4,
            policy_hidden: 128,
            log_std_min: -20.0,
            log_std_max: 2.0,
            precision: Precision::F32,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, m: &str| Error::ConfigKey {
            key: format!("learner.{key}"),
            message: m.into(),
        };
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(err("gamma", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(err("tau", "must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) {
            return Err(err("lr", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(err("batch_size", "must be > 0"));
        }
        if self.policy_delay == 0 {
            return Err(err("policy_delay", "must be > 0"));
        }
        if !(self.alpha_init > 0.0) {
            return Err(err("alpha_init", "must be > 0"));
        }
        if self.critic_hidden == 0 || self.policy_hidden == 0 {
            return Err(err("critic_hidden", "hidden widths must be > 0"));
        }
        if self.critic_heads == 0 || self.critic_hidden % self.critic_heads != 0 {
            return Err(err("critic_heads", "must divide critic_hidden"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(err("log_std_min", "must be below log_std_max"));
        }
        Ok(())
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-2.0)
    }
}

/// One twin-critic head.
#[derive(Debug, Clone)]
pub struct CriticHead {
    pub ego_embed: Dense,
    pub others_embed: Dense,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Concatenation ablation aggregator.
    pub concat: Option<Linear>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub out: Linear,
    pub heads: usize,
    pub hidden: usize,
    pub n_robots: usize,
    pub kind: CriticKind,
}

/// Critic output for all robots of all rows.
#[derive(Debug, Clone)]
pub struct CriticOutput {
    /// `[M, N]`
    pub q: Tensor,
    /// `[M, heads, N, N]` attention weights (attention critic only).
    pub attention: Option<Tensor>,
}

impl CriticHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        feature_dim: usize,
        hidden: usize,
        heads: usize,
        n_robots: usize,
        kind: CriticKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = |s: &str| format!("{name}.{s}");
        let input = feature_dim + 2;
        let concat = match kind {
            CriticKind::Concatenation if n_robots > 1 => {
                Some(Linear::new(store, &n("concat"), (n_robots - 1) * hidden, hidden, rng)?)
            }
            _ => None,
        };
        Ok(Self {
            ego_embed: Dense::new(store, &n("ego_embed"), input, hidden, rng)?,
            others_embed: Dense::new(store, &n("others_embed"), input, hidden, rng)?,
            query: Linear::new(store, &n("query"), hidden, hidden, rng)?,
            key: Linear::new(store, &n("key"), hidden, hidden, rng)?,
            value: Linear::new(store, &n("value"), hidden, hidden, rng)?,
            concat,
            fc1: Linear::new(store, &n("fc1"), 2 * hidden, hidden, rng)?,
            fc2: Linear::new(store, &n("fc2"), hidden, hidden, rng)?,
            out: Linear::new(store, &n("out"), hidden, 1, rng)?,
            heads,
            hidden,
            n_robots,
            kind,
        })
    }

    /// `features: [M, N, F]`, `actions: [M, N, 2]`, `present: [M, N]` (u8):
    /// robots that may be attended to as "others".
    pub fn forward(&self, features: &Tensor, actions: &Tensor, present: &Tensor) -> Result<CriticOutput> {
        let (m, n, _) = features.dims3()?;
        if n != self.n_robots || actions.dims() != [m, n, 2] || present.dims() != [m, n] {
            return Err(Error::contract(format!(
                "critic expects [M, {}, F] features with matching actions and mask",
                self.n_robots
            )));
        }
        let z = Tensor::cat(&[features, actions], 2)?;
        let ego = self.ego_embed.forward(&z)?;
        let others = self.others_embed.forward(&z)?;
        let c = self.hidden;
        let (aggregated, attention) = match self.kind {
            CriticKind::Attention => {
                let (h, d) = (self.heads, c / self.heads);
                let split = |t: Tensor| -> Result<Tensor> {
                    Ok(t.reshape((m, n, h, d))?.transpose(1, 2)?.contiguous()?)
                };
                let q = split(self.query.forward(&ego)?)?;
                let k = split(self.key.forward(&others)?)?;
                let v = split(self.value.forward(&others)?)?;
                let logits = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * (1.0 / (d as f64).sqrt()))?;
                let mask = pair_mask(present, m, n)?
                    .unsqueeze(1)?
                    .broadcast_as((m, h, n, n))?
                    .contiguous()?;
                let w = crate::encoder::masked_softmax(&logits, &mask, 3)?;
                let att = w.matmul(&v)?.transpose(1, 2)?.reshape((m, n, c))?;
                (att, Some(w))
            }
            CriticKind::Concatenation => match &self.concat {
                Some(lin) => {
                    let gated = others.broadcast_mul(&present.to_dtype(others.dtype())?.unsqueeze(2)?)?;
                    let mut rows = Vec::with_capacity(n);
                    for i in 0..n {
                        let idx: Vec<u32> = (0..n as u32).filter(|&j| j as usize != i).collect();
                        let idx = Tensor::new(idx.as_slice(), &Device::Cpu)?;
                        rows.push(gated.index_select(&idx, 1)?.reshape((m, (n - 1) * c))?);
                    }
                    (leaky_relu(&lin.forward(&Tensor::stack(&rows, 1)?)?)?, None)
                }
                None => (ego.zeros_like()?, None),
            },
        };
        let hcat = Tensor::cat(&[&ego, &aggregated], 2)?;
        let x = leaky_relu(&self.fc1.forward(&hcat)?)?;
        let x = leaky_relu(&self.fc2.forward(&x)?)?;
        let q = self.out.forward(&x)?.squeeze(2)?;
        Ok(CriticOutput { q, attention })
    }
}

/// `[M, N, N]` u8 mask: entry `(i, j)` is set when `j != i` and `j` is present.
fn pair_mask(present: &Tensor, m: usize, n: usize) -> Result<Tensor> {
    let off_diag: Vec<u8> = (0..n * n).map(|k| (k / n != k % n) as u8).collect();
    let off_diag = Tensor::from_vec(off_diag, (1, n, n), &Device::Cpu)?.broadcast_as((m, n, n))?;
    let cols = present.unsqueeze(1)?.broadcast_as((m, n, n))?;
    Ok(off_diag.mul(&cols)?.contiguous()?)
}

/// Twin critics sharing one parameter store.
#[derive(Debug, Clone)]
pub struct TwinCritic {
    pub heads: [CriticHead; 2],
}

impl TwinCritic {
    pub fn new(store: &mut ParamStore, feature_dim: usize, n_robots: usize, cfg: &LearnerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mk = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            CriticHead::new(store, name, feature_dim, cfg.critic_hidden, cfg.critic_heads, n_robots, cfg.critic, rng)
        };
        let a = mk(store, "q1", rng)?;
        let b = mk(store, "q2", rng)?;
        Ok(Self { heads: [a, b] })
    }

    pub fn forward(&self, features: &Tensor, actions: &Tensor, present: &Tensor) -> Result<[CriticOutput; 2]> {
        Ok([
            self.heads[0].forward(features, actions, present)?,
            self.heads[1].forward(features, actions, present)?,
        ])
    }
}

/// Shared tanh-Gaussian actor on the social feature.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub layers: [Dense; 3],
    pub head: Linear,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Reparameterised action sample.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// `tanh(u)`, same leading shape as the features plus a trailing 2.
    pub action: Tensor,
    /// Log-density including the tanh change of variables, summed over the
    /// two action dimensions.
    pub log_prob: Tensor,
    pub mean: Tensor,
    pub log_std: Tensor,
}

impl PolicyNet {
    pub fn new(store: &mut ParamStore, feature_dim: usize, cfg: &LearnerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let h = cfg.policy_hidden;
        Ok(Self {
            layers: [
                Dense::new(store, "pi.l1", feature_dim, h, rng)?,
                Dense::new(store, "pi.l2", h, h, rng)?,
                Dense::new(store, "pi.l3", h, h, rng)?,
            ],
            head: Linear::new(store, "pi.head", h, 4, rng)?,
            log_std_min: cfg.log_std_min,
            log_std_max: cfg.log_std_max,
        })
    }

    /// Mean and clamped log standard deviation.
    pub fn distribution(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = features.clone();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        let out = self.head.forward(&x)?;
        let last = out.rank() - 1;
        let mean = out.narrow(last, 0, 2)?;
        let raw = out.narrow(last, 2, 2)?;
        let lo = (raw.ones_like()? * self.log_std_min)?;
        let hi = (raw.ones_like()? * self.log_std_max)?;
        let log_std = raw.maximum(&lo)?.minimum(&hi)?;
        Ok((mean, log_std))
    }

    /// `a = tanh(mu + sigma * eps)` with `eps` supplied by the caller.
    pub fn sample_with_noise(&self, features: &Tensor, eps: &Tensor) -> Result<PolicySample> {
        let (mean, log_std) = self.distribution(features)?;
        let u = (&mean + log_std.exp()?.mul(eps)?)?;
        let action = u.tanh()?;
        let last = u.rank() - 1;
        let gauss = ((eps.sqr()? * -0.5)? - &log_std)?.affine(1.0, -0.5 * (2.0 * std::f64::consts::PI).ln())?;
        // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
        let squash = ((u.neg()? + LN_2)? - softplus(&(&u * -2.0)?)?)? * 2.0;
        let log_prob = (gauss - squash?)?.sum(last)?;
        Ok(PolicySample {
            action,
            log_prob,
            mean,
            log_std,
        })
    }
}

pub fn standard_normal(shape: &[usize], dtype: DType, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Diagnostics from one training call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub update: u64,
    pub critic_loss: f64,
    pub q_mean: f64,
    pub target_mean: f64,
    pub critic_grad_norm: f64,
    pub policy_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub alpha: f64,
    /// Whether the bootstrapped value never exceeded either target head.
    pub twin_min_ok: bool,
}

/// Tensors derived from a training batch, shared by the loss functions.
#[derive(Debug, Clone)]
pub struct BatchTensors {
    /// `[M, N, 2]`
    pub actions: Tensor,
    /// `[M, N]`
    pub rewards: Tensor,
    /// `[M, N]`, 1 where bootstrapping continues.
    pub continues: Tensor,
    /// `[M, N]` u8: robots present when acting / at the next observation.
    pub present: Tensor,
    pub present_next: Tensor,
    /// `[M, N]` loss weights: valid step and robot acted.
    pub weights: Tensor,
    pub weight_sum: f64,
}

impl BatchTensors {
    pub fn new(batch: &TrainingBatch, dtype: DType) -> Result<Self> {
        let (b, l, n) = (batch.n_segments, batch.segment_len, batch.n_robots);
        let m = b * l;
        let dev = Device::Cpu;
        let mut actions = Vec::with_capacity(m * n * 2);
        let mut rewards = Vec::with_capacity(m * n);
        let mut cont = Vec::with_capacity(m * n);
        let mut present = Vec::with_capacity(m * n);
        let mut present_next = Vec::with_capacity(m * n);
        let mut weights = Vec::with_capacity(m * n);
        for s in 0..b {
            for t in 0..l {
                for i in 0..n {
                    let a = batch.actions[s][t][i];
                    actions.extend_from_slice(&a);
                    rewards.push(batch.rewards[s][t][i]);
                    cont.push(if batch.terminal[s][t][i] { 0.0 } else { 1.0 });
                    present.push(batch.active[s][t][i] as u8);
                    present_next.push(batch.active[s][t + 1][i] as u8);
                    weights.push(if batch.valid[s][t] && batch.active[s][t][i] { 1.0 } else { 0.0 });
                }
            }
        }
        let weight_sum: f64 = weights.iter().sum();
        Ok(Self {
            actions: Tensor::from_vec(actions, (m, n, 2), &dev)?.to_dtype(dtype)?,
            rewards: Tensor::from_vec(rewards, (m, n), &dev)?.to_dtype(dtype)?,
            continues: Tensor::from_vec(cont, (m, n), &dev)?.to_dtype(dtype)?,
            present: Tensor::from_vec(present, (m, n), &dev)?,
            present_next: Tensor::from_vec(present_next, (m, n), &dev)?,
            weights: Tensor::from_vec(weights, (m, n), &dev)?.to_dtype(dtype)?,
            weight_sum,
        })
    }

    /// Weighted mean over acting robots at valid steps.
    pub fn masked_mean(&self, per_robot: &Tensor) -> Result<Tensor> {
        Ok((per_robot.mul(&self.weights)?.sum_all()? / self.weight_sum.max(1.0))?)
    }
}

/// Per-step social features of a training batch.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    /// Online features at observations `0..L`, `[M, N, F]`.
    pub current: Tensor,
    /// Target-encoder features at observations `1..=L`, `[M, N, F]`.
    pub next: Tensor,
}

/// Stacks per-step `[B * N, F]` features to `[B * T, N, F]`.
fn stack_steps(steps: &[Tensor], b: usize, n: usize) -> Result<Tensor> {
    let f = steps[0].dims()[1];
    let per: Vec<Tensor> = steps.iter().map(|t| t.reshape((b, n, f))).collect::<candle_core::Result<_>>()?;
    Ok(Tensor::stack(&per, 1)?.reshape((b * steps.len(), n, f))?)
}

/// Whole learner state: online and target networks, temperature and optimisers.
#[derive(Debug, Clone)]
pub struct Msa3c {
    pub config: LearnerConfig,
    pub encoder_config: EncoderConfig,
    pub n_robots: usize,
    pub seed: u64,
    pub encoder: SocialEncoder,
    pub encoder_params: ParamStore,
    pub target_encoder: SocialEncoder,
    pub target_encoder_params: ParamStore,
    pub critic: TwinCritic,
    pub critic_params: ParamStore,
    pub target_critic: TwinCritic,
    pub target_critic_params: ParamStore,
    pub policy: PolicyNet,
    pub policy_params: ParamStore,
    pub log_alpha: Var,
    pub critic_opt: Adam,
    pub policy_opt: Adam,
    pub alpha_opt: Adam,
    pub updates: u64,
    pub policy_updates: u64,
}

impl Msa3c {
    pub fn new(encoder_config: &EncoderConfig, config: &LearnerConfig, n_robots: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        encoder_config.validate()?;
        if n_robots == 0 {
            return Err(Error::contract("learner needs at least one robot"));
        }
        let dtype = config.precision.dtype();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_INIT);
        let mut encoder_params = ParamStore::new(dtype);
        let encoder = SocialEncoder::new(&mut encoder_params, "enc", encoder_config, &mut rng)?;
        let mut critic_params = ParamStore::new(dtype);
        let critic = TwinCritic::new(&mut critic_params, encoder_config.feature_dim, n_robots, config, &mut rng)?;
        let mut policy_params = ParamStore::new(dtype);
        let policy = PolicyNet::new(&mut policy_params, encoder_config.feature_dim, config, &mut rng)?;

        // Targets start as exact copies; rebuilding the modules against the
        // copied store keeps their variables separate from the online ones.
        let target_encoder_params = encoder_params.deep_clone()?;
        let target_encoder = rebind_encoder(&encoder, &target_encoder_params)?;
        let target_critic_params = critic_params.deep_clone()?;
        let target_critic = rebind_critic(&critic, &target_critic_params)?;

        let log_alpha = Var::from_tensor(&Tensor::new(&[config.alpha_init.ln()], &Device::Cpu)?.to_dtype(dtype)?)?;
        Ok(Self {
            config: config.clone(),
            encoder_config: encoder_config.clone(),
            n_robots,
            seed,
            encoder,
            encoder_params,
            target_encoder,
            target_encoder_params,
            critic,
            critic_params,
            target_critic,
            target_critic_params,
            policy,
            policy_params,
            log_alpha,
            critic_opt: Adam::new(config.lr, config.grad_clip),
            policy_opt: Adam::new(config.lr, config.grad_clip),
            alpha_opt: Adam::new(config.lr, None),
            updates: 0,
            policy_updates: 0,
        })
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    pub fn alpha(&self) -> Result<f64> {
        Ok(nn::scalar(&self.log_alpha.as_tensor().exp()?)?)
    }

    /// Number of other-agent slots a robot tracks during execution.
    pub fn execution_capacity(n_agents: usize) -> usize {
        n_agents.saturating_sub(1)
    }

    /// Online features for observations `0..L` and target features for `1..=L`.
    pub fn batch_features(&self, batch: &TrainingBatch) -> Result<BatchFeatures> {
        let dtype = self.dtype();
        let (b, n, l) = (batch.n_segments, batch.n_robots, batch.segment_len);
        let hidden_refs: Vec<_> = batch.hidden.iter().collect();
        let h0 = HiddenStates::from_stored(
            &hidden_refs,
            &batch.padded.slot_maps,
            batch.padded.max_agents,
            &self.encoder_config,
            dtype,
        )?;
        let inputs: Vec<_> = (0..=l).map(|t| batch.padded.step_inputs(t, dtype)).collect::<Result<_>>()?;

        let mut h = h0.clone();
        let mut online = Vec::with_capacity(l);
        for inp in inputs.iter().take(l) {
            let out = self.encoder.step(inp, &h)?;
            online.push(out.feature);
            h = out.hidden;
        }
        let mut h = h0;
        let mut target = Vec::with_capacity(l);
        for (t, inp) in inputs.iter().enumerate() {
            let out = self.target_encoder.step(inp, &h)?;
            if t > 0 {
                target.push(out.feature.detach());
            }
            h = out.hidden.detach();
        }
        Ok(BatchFeatures {
            current: stack_steps(&online, b, n)?,
            next: stack_steps(&target, b, n)?,
        })
    }

    /// Soft TD targets `r + gamma * c * (min(Q1', Q2') - alpha * log pi(a'|x'))`
    /// with fresh next actions drawn using `eps_next` (`[M, N, 2]`).
    pub fn td_target(&self, next_features: &Tensor, bt: &BatchTensors, eps_next: &Tensor) -> Result<(Tensor, bool)> {
        let next = next_features.detach();
        let sample = self.policy.sample_with_noise(&next, eps_next)?;
        let [q1, q2] = self.target_critic.forward(&next, &sample.action.detach(), &bt.present_next)?;
        let q_min = q1.q.minimum(&q2.q)?;
        let twin_ok = {
            let a = nn::to_f64_vec(&(q1.q.sub(&q_min))?)?;
            let b = nn::to_f64_vec(&(q2.q.sub(&q_min))?)?;
            a.iter().chain(&b).all(|d| *d >= 0.0)
        };
        let alpha = self.log_alpha.as_tensor().exp()?.detach();
        let soft = q_min.broadcast_sub(&sample.log_prob.detach().broadcast_mul(&alpha)?)?;
        let y = (&bt.rewards + (bt.continues.mul(&soft)? * self.config.gamma)?)?;
        Ok((y.detach(), twin_ok))
    }

    /// Masked squared TD error summed over both heads.
    pub fn critic_loss(&self, features: &Tensor, bt: &BatchTensors, targets: &Tensor) -> Result<(Tensor, Tensor)> {
        let [q1, q2] = self.critic.forward(features, &bt.actions, &bt.present)?;
        let err = ((&q1.q - targets)?.sqr()? + (&q2.q - targets)?.sqr()?)?;
        Ok((bt.masked_mean(&err)?, q1.q))
    }

    /// Actor objective `E[alpha log pi(a|x) - min(Q1, Q2)(x, a)]` with
    /// fresh joint actions for every robot; returns the loss and log-probs.
    pub fn policy_loss(&self, features: &Tensor, bt: &BatchTensors, eps: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = features.detach();
        let sample = self.policy.sample_with_noise(&x, eps)?;
        let [q1, q2] = self.critic.forward(&x, &sample.action, &bt.present)?;
        let q_min = q1.q.minimum(&q2.q)?;
        let alpha = self.log_alpha.as_tensor().exp()?.detach();
        let per = (sample.log_prob.broadcast_mul(&alpha)? - q_min)?;
        Ok((bt.masked_mean(&per)?, sample.log_prob))
    }

    /// Temperature objective `-log(alpha) * (log pi + target_entropy)`.
    pub fn temperature_loss(&self, log_prob: &Tensor, bt: &BatchTensors) -> Result<Tensor> {
        let gap = (log_prob.detach() + self.config.target_entropy())?;
        let per = gap.broadcast_mul(self.log_alpha.as_tensor())?.neg()?;
        bt.masked_mean(&per)
    }

    fn update_rng(&self, update: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_UPDATE + update);
        rng
    }

    /// One learner step on a replay sample: critic update, target soft
    /// update and, every `policy_delay` calls, actor and temperature updates.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<TrainMetrics> {
        let mut rng = self.update_rng(self.updates);
        let segs = buffer.sample(self.config.batch_size, &mut rng)?;
        let batch = pack_segments(&segs)?;
        self.train_on_batch(&batch, &mut rng)
    }

    pub fn train_on_batch(&mut self, batch: &TrainingBatch, rng: &mut ChaCha8Rng) -> Result<TrainMetrics> {
        if batch.n_robots != self.n_robots {
            return Err(Error::contract(format!(
                "batch has {} robots, learner was built for {}",
                batch.n_robots, self.n_robots
            )));
        }
        let dtype = self.dtype();
        let bt = BatchTensors::new(batch, dtype)?;
        let feats = self.batch_features(batch)?;
        let shape = bt.actions.dims().to_vec();
        let eps_next = standard_normal(&shape, dtype, rng)?;
        let (targets, twin_min_ok) = self.td_target(&feats.next, &bt, &eps_next)?;
        let (loss, q1) = self.critic_loss(&feats.current, &bt, &targets)?;
        let grads = loss.backward()?;
        let mut critic_vars = self.encoder_params.vars();
        critic_vars.extend(self.critic_params.vars());
        let critic_grad_norm = self.critic_opt.step(&critic_vars, &grads)?;
        self.target_critic_params.soft_update_from(&self.critic_params, self.config.tau)?;
        self.target_encoder_params.soft_update_from(&self.encoder_params, self.config.tau)?;
        self.updates += 1;

        let mut metrics = TrainMetrics {
            update: self.updates,
            critic_loss: nn::scalar(&loss)?,
            q_mean: nn::scalar(&bt.masked_mean(&q1)?)?,
            target_mean: nn::scalar(&bt.masked_mean(&targets)?)?,
            critic_grad_norm,
            policy_loss: None,
            entropy: None,
            alpha: self.alpha()?,
            twin_min_ok,
        };

        if self.updates % self.config.policy_delay as u64 == 0 {
            let eps = standard_normal(&shape, dtype, rng)?;
            let (ploss, log_prob) = self.policy_loss(&feats.current, &bt, &eps)?;
            let pgrads = ploss.backward()?;
            self.policy_opt.step(&self.policy_params.vars(), &pgrads)?;
            let aloss = self.temperature_loss(&log_prob, &bt)?;
            let agrads = aloss.backward()?;
            self.alpha_opt.step(std::slice::from_ref(&self.log_alpha), &agrads)?;
            self.policy_updates += 1;
            metrics.policy_loss = Some(nn::scalar(&ploss)?);
            metrics.entropy = Some(-nn::scalar(&bt.masked_mean(&log_prob)?)?);
            metrics.alpha = self.alpha()?;
        }
        Ok(metrics)
    }

    /// Decentralised execution: row `k` of `steps` and `hidden` belongs to
    /// one robot and only that row influences its action.
    pub fn act(
        &self,
        steps: &[RawStep],
        hidden: &HiddenStates,
        capacity: usize,
        mode: ActionMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<[f64; 2]>, HiddenStates)> {
        let dtype = self.dtype();
        let inputs = execution_inputs(steps, capacity, dtype)?;
        let out = self.encoder.step(&inputs, hidden)?;
        let rows = steps.len();
        let actions = match mode {
            ActionMode::Deterministic => {
                let (mean, _) = self.policy.distribution(&out.feature)?;
                mean.tanh()?
            }
            ActionMode::Stochastic => {
                let eps = standard_normal(&[rows, 2], dtype, rng)?;
                self.policy.sample_with_noise(&out.feature, &eps)?.action
            }
        };
        let v = actions.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let clamp = |x: f64| x.clamp(-1.0, 1.0);
        Ok((
            v.into_iter().map(|r| [clamp(r[0]), clamp(r[1])]).collect(),
            out.hidden.detach(),
        ))
    }

    pub fn initial_hidden(&self, robots: usize, capacity: usize) -> Result<HiddenStates> {
        HiddenStates::zeros(robots, capacity, &self.encoder_config, self.dtype())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CONTAINER_KIND);
        ck.insert_store("encoder", &self.encoder_params);
        ck.insert_store("target_encoder", &self.target_encoder_params);
        ck.insert_store("critic", &self.critic_params);
        ck.insert_store("target_critic", &self.target_critic_params);
        ck.insert_store("policy", &self.policy_params);
        ck.insert("log_alpha", self.log_alpha.as_tensor().clone());
        for (name, opt) in [("critic_opt", &self.critic_opt), ("policy_opt", &self.policy_opt), ("alpha_opt", &self.alpha_opt)] {
            ck.metadata.insert(format!("{name}.step"), opt.step.to_string());
            for (k, (m, v)) in opt.moments().iter().enumerate() {
                ck.insert(format!("{name}/{k}/m"), m.clone());
                ck.insert(format!("{name}/{k}/v"), v.clone());
            }
        }
        ck.metadata.insert("updates".into(), self.updates.to_string());
        ck.metadata.insert("policy_updates".into(), self.policy_updates.to_string());
        ck.metadata.insert("n_robots".into(), self.n_robots.to_string());
        ck.metadata.insert("seed".into(), self.seed.to_string());
        ck.metadata.insert(
            "learner_config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        ck.metadata.insert(
            "encoder_config".into(),
            serde_json::to_string(&self.encoder_config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let json = |k: &str| -> Result<&str> { ck.meta(k) };
        let config: LearnerConfig =
            serde_json::from_str(json("learner_config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let encoder_config: EncoderConfig =
            serde_json::from_str(json("encoder_config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let parse = |k: &str| -> Result<u64> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata {k} is not an integer")))
        };
        let mut me = Self::new(&encoder_config, &config, parse("n_robots")? as usize, parse("seed")?)?;
        ck.restore_store("encoder", &me.encoder_params)?;
        ck.restore_store("target_encoder", &me.target_encoder_params)?;
        ck.restore_store("critic", &me.critic_params)?;
        ck.restore_store("target_critic", &me.target_critic_params)?;
        ck.restore_store("policy", &me.policy_params)?;
        let la = ck.tensor("log_alpha")?;
        if la.dims() != me.log_alpha.dims() {
            return Err(Error::Checkpoint("log_alpha has the wrong shape".into()));
        }
        me.log_alpha.set(&la.to_dtype(me.dtype())?)?;
        let dtype = me.dtype();
        for (name, opt) in [("critic_opt", &mut me.critic_opt), ("policy_opt", &mut me.policy_opt), ("alpha_opt", &mut me.alpha_opt)] {
            let step = parse(&format!("{name}.step"))?;
            let mut moments = Vec::new();
            let mut k = 0;
            while let (Ok(m), Ok(v)) = (ck.tensor(&format!("{name}/{k}/m")), ck.tensor(&format!("{name}/{k}/v"))) {
                moments.push((m.to_dtype(dtype)?, v.to_dtype(dtype)?));
                k += 1;
            }
            opt.restore(step, moments);
        }
        me.updates = parse("updates")?;
        me.policy_updates = parse("policy_updates")?;
        Ok(me)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CONTAINER_KIND)?)
    }

    /// Sum of absolute differences in every online parameter (for tests).
    pub fn param_l1(&self) -> Result<f64> {
        let mut s = 0.0;
        for store in [&self.encoder_params, &self.critic_params, &self.policy_params] {
            for (_, v) in store.iter() {
                s += nn::scalar(&v.as_tensor().abs()?.sum_all()?)?;
            }
        }
        Ok(s)
    }
}

/// Re-creates `enc` with every variable taken from `store` by name.
fn rebind_encoder(enc: &SocialEncoder, store: &ParamStore) -> Result<SocialEncoder> {
    let mut out = enc.clone();
    let mut binder = Binder::new(store);
    binder.dense(&mut out.spatial_embed, "enc.spatial_embed")?;
    binder.gru(&mut out.spatial_cell, "enc.spatial_gru")?;
    binder.dense(&mut out.temporal_embed, "enc.temporal_embed")?;
    binder.gru(&mut out.temporal_cell, "enc.temporal_gru")?;
    binder.linear(&mut out.query, "enc.attn_query")?;
    binder.linear(&mut out.key, "enc.attn_key")?;
    binder.linear(&mut out.value, "enc.attn_value")?;
    binder.dense(&mut out.ego_embed, "enc.ego_embed")?;
    binder.dense(&mut out.node_mix, "enc.node_mix")?;
    binder.gru(&mut out.node_cell, "enc.node_gru")?;
    binder.dense(&mut out.output, "enc.output")?;
    Ok(out)
}

fn rebind_critic(critic: &TwinCritic, store: &ParamStore) -> Result<TwinCritic> {
    let mut out = critic.clone();
    let mut binder = Binder::new(store);
    for (head, name) in out.heads.iter_mut().zip(["q1", "q2"]) {
        binder.dense(&mut head.ego_embed, &format!("{name}.ego_embed"))?;
        binder.dense(&mut head.others_embed, &format!("{name}.others_embed"))?;
        binder.linear(&mut head.query, &format!("{name}.query"))?;
        binder.linear(&mut head.key, &format!("{name}.key"))?;
        binder.linear(&mut head.value, &format!("{name}.value"))?;
        if let Some(c) = head.concat.as_mut() {
            binder.linear(c, &format!("{name}.concat"))?;
        }
        binder.linear(&mut head.fc1, &format!("{name}.fc1"))?;
        binder.linear(&mut head.fc2, &format!("{name}.fc2"))?;
        binder.linear(&mut head.out, &format!("{name}.out"))?;
    }
    Ok(out)
}

struct Binder<'a> {
    store: &'a ParamStore,
}

impl<'a> Binder<'a> {
    fn new(store: &'a ParamStore) -> Self {
        Self { store }
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.store
            .get(name)
            .cloned()
            .ok_or_else(|| Error::contract(format!("parameter {name} missing from store")))
    }

    fn linear(&mut self, l: &mut Linear, name: &str) -> Result<()> {
        l.weight = self.var(&format!("{name}.weight"))?;
        l.bias = self.var(&format!("{name}.bias"))?;
        Ok(())
    }

    fn dense(&mut self, d: &mut Dense, name: &str) -> Result<()> {
        self.linear(&mut d.linear, &format!("{name}.fc"))?;
        d.norm.gamma = self.var(&format!("{name}.ln.gamma"))?;
        d.norm.beta = self.var(&format!("{name}.ln.beta"))?;
        Ok(())
    }

    fn gru(&mut self, g: &mut crate::nn::GruCell, name: &str) -> Result<()> {
        self.linear(&mut g.input, &format!("{name}.ih"))?;
        self.linear(&mut g.hidden, &format!("{name}.hh"))
    }
}
