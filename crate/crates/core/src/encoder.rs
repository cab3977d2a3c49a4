//! Temporal-spatial graph social encoder.
//!
//! Each robot is the centre of a star graph. Spatial edges run a recurrent
//! cell per neighbouring agent over its relative position, the temporal edge
//! runs one over the robot's own displacement, and multi-head attention
//! (queries from spatial edges, key from the temporal edge) pools the spatial
//! edges into a fixed-length vector. A node recurrence fuses that vector with
//! the ego state and emits the social feature.
//!
//! Agent slots follow agent identity: during execution a robot keeps one
//! slot per other agent in the scene (ordered by agent id). Batches compact
//! these slots per sequence to the agents actually seen, so the padded agent
//! axis equals the largest occupancy in the batch.

use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, GruCell, Linear, ParamStore};
use crate::sim::Observation;

pub const EGO_DIM: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Width of the edge input embeddings.
    pub edge_embed: usize,
    /// Hidden width of the spatial and temporal edge recurrences.
    pub edge_hidden: usize,
    /// Total width of the attention projections (all heads).
    pub attention_dim: usize,
    pub heads: usize,
    pub ego_embed: usize,
    /// Width of the fused node input.
    pub node_input: usize,
    pub node_hidden: usize,
    /// Length of the emitted social feature.
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            edge_embed: 64,
            edge_hidden: 256,
            attention_dim: 128,
            heads: 4,
            ego_embed: 64,
            node_input: 128,
            node_hidden: 256,
            feature_dim: 256,
        }
    }
}

impl EncoderConfig {
    /// Every width set to `h` (heads must divide it).
    pub fn uniform(h: usize, heads: usize) -> Self {
        Self {
            edge_embed: h,
            edge_hidden: h,
            attention_dim: h,
            heads,
            ego_embed: h,
            node_input: h,
            node_hidden: h,
            feature_dim: h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, m: &str| Error::ConfigKey {
            key: format!("encoder.{key}"),
            message: m.into(),
        };
        for (k, v) in [
            ("edge_embed", self.edge_embed),
            ("edge_hidden", self.edge_hidden),
            ("attention_dim", self.attention_dim),
            ("heads", self.heads),
            ("ego_embed", self.ego_embed),
            ("node_input", self.node_input),
            ("node_hidden", self.node_hidden),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(err(k, "must be > 0"));
            }
        }
        if self.attention_dim % self.heads != 0 {
            return Err(err("heads", "must divide attention_dim"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.attention_dim / self.heads
    }
}

/// Another agent seen at one step, in identity-slot coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotEntry {
    pub slot: usize,
    pub relative_position: [f64; 2],
}

/// Encoder input for one robot at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStep {
    pub ego: [f64; EGO_DIM],
    /// Own displacement since the previous step.
    pub ego_delta: [f64; 2],
    pub others: Vec<SlotEntry>,
    /// False for pseudo-steps appended as padding.
    pub valid: bool,
}

impl RawStep {
    pub fn padding() -> Self {
        Self {
            ego: [0.0; EGO_DIM],
            ego_delta: [0.0; 2],
            others: Vec::new(),
            valid: false,
        }
    }
}

/// Identity slot of agent `agent_id` as seen by robot `robot_id`.
pub fn identity_slot(robot_id: usize, agent_id: usize) -> usize {
    if agent_id < robot_id {
        agent_id
    } else {
        agent_id - 1
    }
}

/// Builds the encoder input from a robot's own observation stream. The
/// displacement comes from the previous ego position (zero on the first step).
pub fn raw_step(obs: &Observation, robot_id: usize, previous_position: Option<[f64; 2]>) -> RawStep {
    let ego_delta = previous_position.map_or([0.0, 0.0], |p| [obs.ego[0] - p[0], obs.ego[1] - p[1]]);
    RawStep {
        ego: obs.ego,
        ego_delta,
        others: obs
            .others
            .iter()
            .map(|o| SlotEntry {
                slot: identity_slot(robot_id, o.agent_id),
                relative_position: [o.relative_position.x, o.relative_position.y],
            })
            .collect(),
        valid: true,
    }
}

/// Time-padded, agent-padded encoder input for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub time: usize,
    pub max_agents: usize,
    /// `[batch, time, max_agents, 2]`
    pub spatial_inputs: Vec<f64>,
    /// `[batch, time, 2]`
    pub temporal_inputs: Vec<f64>,
    /// `[batch, time, 9]`
    pub ego_inputs: Vec<f64>,
    /// `[batch, time, max_agents]`
    pub agent_mask: Vec<bool>,
    /// `[batch, time]`
    pub time_mask: Vec<bool>,
    /// Per sequence: identity slot held by each compact slot.
    pub slot_maps: Vec<Vec<usize>>,
}

/// Packs equally long sequences into a padded batch. Agents are compacted
/// per sequence (ordered by identity slot); every slot beyond a sequence's
/// own agents, and every agent absent at a step, is masked.
pub fn package_batch(sequences: &[&[RawStep]]) -> Result<PaddedBatch> {
    let time = sequences.first().map_or(0, |s| s.len());
    if let Some((i, s)) = sequences.iter().enumerate().find(|(_, s)| s.len() != time) {
        return Err(Error::contract(format!(
            "sequence {i} has length {}, expected {time}",
            s.len()
        )));
    }
    let slot_maps: Vec<Vec<usize>> = sequences
        .iter()
        .map(|seq| {
            let mut slots: Vec<usize> = seq.iter().flat_map(|s| s.others.iter().map(|o| o.slot)).collect();
            slots.sort_unstable();
            slots.dedup();
            slots
        })
        .collect();
    let max_agents = slot_maps.iter().map(Vec::len).max().unwrap_or(0);
    let batch = sequences.len();
    let mut out = PaddedBatch {
        batch,
        time,
        max_agents,
        spatial_inputs: vec![0.0; batch * time * max_agents * 2],
        temporal_inputs: vec![0.0; batch * time * 2],
        ego_inputs: vec![0.0; batch * time * EGO_DIM],
        agent_mask: vec![false; batch * time * max_agents],
        time_mask: vec![false; batch * time],
        slot_maps,
    };
    for (b, seq) in sequences.iter().enumerate() {
        for (t, step) in seq.iter().enumerate() {
            let bt = b * time + t;
            out.time_mask[bt] = step.valid;
            if !step.valid {
                continue;
            }
            out.temporal_inputs[bt * 2..bt * 2 + 2].copy_from_slice(&step.ego_delta);
            out.ego_inputs[bt * EGO_DIM..(bt + 1) * EGO_DIM].copy_from_slice(&step.ego);
            for o in &step.others {
                let a = out.slot_maps[b].binary_search(&o.slot).expect("slot collected above");
                let idx = bt * max_agents + a;
                out.agent_mask[idx] = true;
                out.spatial_inputs[idx * 2..idx * 2 + 2].copy_from_slice(&o.relative_position);
            }
        }
    }
    Ok(out)
}

impl PaddedBatch {
    /// Recovers the unpadded steps (the inverse of [`package_batch`] on
    /// valid entries).
    pub fn unpack(&self) -> Vec<Vec<RawStep>> {
        (0..self.batch)
            .map(|b| {
                (0..self.time)
                    .map(|t| {
                        let bt = b * self.time + t;
                        if !self.time_mask[bt] {
                            return RawStep::padding();
                        }
                        let mut ego = [0.0; EGO_DIM];
                        ego.copy_from_slice(&self.ego_inputs[bt * EGO_DIM..(bt + 1) * EGO_DIM]);
                        let others = (0..self.max_agents)
                            .filter(|&a| self.agent_mask[bt * self.max_agents + a])
                            .map(|a| {
                                let idx = bt * self.max_agents + a;
                                SlotEntry {
                                    slot: self.slot_maps[b][a],
                                    relative_position: [self.spatial_inputs[idx * 2], self.spatial_inputs[idx * 2 + 1]],
                                }
                            })
                            .collect();
                        RawStep {
                            ego,
                            ego_delta: [self.temporal_inputs[bt * 2], self.temporal_inputs[bt * 2 + 1]],
                            others,
                            valid: true,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Tensor view of step `t`.
    pub fn step_inputs(&self, t: usize, dtype: DType) -> Result<StepInputs> {
        let dev = Device::Cpu;
        let (b, a, tt) = (self.batch, self.max_agents, self.time);
        let mut spatial = Vec::with_capacity(b * a * 2);
        let mut amask = Vec::with_capacity(b * a);
        let mut delta = Vec::with_capacity(b * 2);
        let mut ego = Vec::with_capacity(b * EGO_DIM);
        let mut tmask = Vec::with_capacity(b);
        for bi in 0..b {
            let bt = bi * tt + t;
            spatial.extend_from_slice(&self.spatial_inputs[bt * a * 2..(bt + 1) * a * 2]);
            amask.extend(self.agent_mask[bt * a..(bt + 1) * a].iter().map(|&m| m as u8));
            delta.extend_from_slice(&self.temporal_inputs[bt * 2..bt * 2 + 2]);
            ego.extend_from_slice(&self.ego_inputs[bt * EGO_DIM..(bt + 1) * EGO_DIM]);
            tmask.push(self.time_mask[bt] as u8);
        }
        Ok(StepInputs {
            spatial: Tensor::from_vec(spatial, (b, a, 2), &dev)?.to_dtype(dtype)?,
            agent_mask: Tensor::from_vec(amask, (b, a), &dev)?,
            temporal: Tensor::from_vec(delta, (b, 2), &dev)?.to_dtype(dtype)?,
            ego: Tensor::from_vec(ego, (b, EGO_DIM), &dev)?.to_dtype(dtype)?,
            time_mask: Tensor::from_vec(tmask, b, &dev)?,
        })
    }
}

/// Encoder inputs for one step of a batch.
#[derive(Debug, Clone)]
pub struct StepInputs {
    /// `[B, A, 2]`
    pub spatial: Tensor,
    /// `[B, A]`, u8
    pub agent_mask: Tensor,
    /// `[B, 2]`
    pub temporal: Tensor,
    /// `[B, 9]`
    pub ego: Tensor,
    /// `[B]`, u8
    pub time_mask: Tensor,
}

/// Recurrent state of the encoder for a batch.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    /// `[B, A, edge_hidden]`; `None` when the agent axis is empty.
    pub spatial: Option<Tensor>,
    /// `[B, edge_hidden]`
    pub temporal: Tensor,
    /// `[B, node_hidden]`
    pub node: Tensor,
}

/// Host copy of one robot's hidden state in identity-slot layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoredHidden {
    /// `capacity * edge_hidden` values, slot-major.
    pub spatial: Vec<f32>,
    pub temporal: Vec<f32>,
    pub node: Vec<f32>,
}

impl StoredHidden {
    pub fn zeros(capacity: usize, cfg: &EncoderConfig) -> Self {
        Self {
            spatial: vec![0.0; capacity * cfg.edge_hidden],
            temporal: vec![0.0; cfg.edge_hidden],
            node: vec![0.0; cfg.node_hidden],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.spatial
            .iter()
            .chain(&self.temporal)
            .chain(&self.node)
            .all(|v| v.is_finite())
    }
}

impl HiddenStates {
    pub fn zeros(batch: usize, agents: usize, cfg: &EncoderConfig, dtype: DType) -> Result<Self> {
        let dev = Device::Cpu;
        Ok(Self {
            spatial: if agents > 0 {
                Some(Tensor::zeros((batch, agents, cfg.edge_hidden), dtype, &dev)?)
            } else {
                None
            },
            temporal: Tensor::zeros((batch, cfg.edge_hidden), dtype, &dev)?,
            node: Tensor::zeros((batch, cfg.node_hidden), dtype, &dev)?,
        })
    }

    /// Gathers stored identity-layout states into the compact layout given
    /// by `slot_maps`; slots beyond a stored capacity start at zero.
    pub fn from_stored(
        stored: &[&StoredHidden],
        slot_maps: &[Vec<usize>],
        agents: usize,
        cfg: &EncoderConfig,
        dtype: DType,
    ) -> Result<Self> {
        let dev = Device::Cpu;
        let (b, he, hn) = (stored.len(), cfg.edge_hidden, cfg.node_hidden);
        let mut temporal = Vec::with_capacity(b * he);
        let mut node = Vec::with_capacity(b * hn);
        let mut spatial = vec![0f32; b * agents * he];
        for (i, s) in stored.iter().enumerate() {
            if s.temporal.len() != he || s.node.len() != hn || s.spatial.len() % he != 0 {
                return Err(Error::contract("stored hidden state has the wrong width"));
            }
            temporal.extend_from_slice(&s.temporal);
            node.extend_from_slice(&s.node);
            let capacity = s.spatial.len() / he;
            for (a, &slot) in slot_maps[i].iter().enumerate() {
                if slot < capacity {
                    let dst = (i * agents + a) * he;
                    spatial[dst..dst + he].copy_from_slice(&s.spatial[slot * he..(slot + 1) * he]);
                }
            }
        }
        Ok(Self {
            spatial: if agents > 0 {
                Some(Tensor::from_vec(spatial, (b, agents, he), &dev)?.to_dtype(dtype)?)
            } else {
                None
            },
            temporal: Tensor::from_vec(temporal, (b, he), &dev)?.to_dtype(dtype)?,
            node: Tensor::from_vec(node, (b, hn), &dev)?.to_dtype(dtype)?,
        })
    }

    /// Host copies per batch row, assuming the identity slot layout.
    pub fn to_stored(&self) -> Result<Vec<StoredHidden>> {
        let temporal = self.temporal.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let node = self.node.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let spatial: Vec<Vec<f32>> = match &self.spatial {
            Some(s) => {
                let b = s.dims()[0];
                s.to_dtype(DType::F32)?.reshape((b, ()))?.to_vec2::<f32>()?
            }
            None => vec![Vec::new(); temporal.len()],
        };
        Ok(temporal
            .into_iter()
            .zip(node)
            .zip(spatial)
            .map(|((temporal, node), spatial)| StoredHidden { spatial, temporal, node })
            .collect())
    }

    pub fn detach(&self) -> Self {
        Self {
            spatial: self.spatial.as_ref().map(Tensor::detach),
            temporal: self.temporal.detach(),
            node: self.node.detach(),
        }
    }

    pub fn is_finite(&self) -> Result<bool> {
        let mut all = vec![self.temporal.clone(), self.node.clone()];
        if let Some(s) = &self.spatial {
            all.push(s.clone());
        }
        for t in all {
            if !crate::nn::to_f64_vec(&t)?.iter().all(|v| v.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Softmax along `dim` restricted to entries where `mask` (u8, same shape)
/// is set. Masked entries get exactly zero weight; a fully masked row yields
/// all zeros instead of NaN.
pub fn masked_softmax(logits: &Tensor, mask: &Tensor, dim: usize) -> Result<Tensor> {
    let zeros = logits.zeros_like()?;
    let floor = (logits.ones_like()? * -1e30)?;
    let shift = mask.where_cond(logits, &floor)?.max_keepdim(dim)?.detach();
    let shift = shift.maximum(&(shift.ones_like()? * -1e4)?)?;
    let centred = mask.where_cond(&logits.broadcast_sub(&shift)?, &zeros)?;
    let e = mask.where_cond(&centred.exp()?, &zeros)?;
    let denom = e.sum_keepdim(dim)?;
    let denom = denom.maximum(&(denom.ones_like()? * 1e-30)?)?;
    Ok(e.broadcast_div(&denom)?)
}

fn keep_where(mask: &Tensor, updated: &Tensor, previous: &Tensor) -> Result<Tensor> {
    let mask = mask.broadcast_as(updated.shape())?;
    Ok(mask.where_cond(updated, previous)?)
}

/// Output of one encoder step.
#[derive(Debug, Clone)]
pub struct EncoderStep {
    /// `[B, feature_dim]`
    pub feature: Tensor,
    /// `[B, heads, A]` attention weights (absent when A = 0).
    pub attention: Option<Tensor>,
    pub hidden: HiddenStates,
}

#[derive(Debug, Clone)]
pub struct SocialEncoder {
    pub config: EncoderConfig,
    pub spatial_embed: Dense,
    pub spatial_cell: GruCell,
    pub temporal_embed: Dense,
    pub temporal_cell: GruCell,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub ego_embed: Dense,
    pub node_mix: Dense,
    pub node_cell: GruCell,
    pub output: Dense,
}

impl SocialEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            config: c.clone(),
            spatial_embed: Dense::new(store, &n("spatial_embed"), 2, c.edge_embed, rng)?,
            spatial_cell: GruCell::new(store, &n("spatial_gru"), c.edge_embed, c.edge_hidden, rng)?,
            temporal_embed: Dense::new(store, &n("temporal_embed"), 2, c.edge_embed, rng)?,
            temporal_cell: GruCell::new(store, &n("temporal_gru"), c.edge_embed, c.edge_hidden, rng)?,
            query: Linear::new(store, &n("attn_query"), c.edge_hidden, c.attention_dim, rng)?,
            key: Linear::new(store, &n("attn_key"), c.edge_hidden, c.attention_dim, rng)?,
            value: Linear::new(store, &n("attn_value"), c.edge_hidden, c.attention_dim, rng)?,
            ego_embed: Dense::new(store, &n("ego_embed"), EGO_DIM, c.ego_embed, rng)?,
            node_mix: Dense::new(store, &n("node_mix"), c.attention_dim + c.ego_embed, c.node_input, rng)?,
            node_cell: GruCell::new(store, &n("node_gru"), c.node_input, c.node_hidden, rng)?,
            output: Dense::new(store, &n("output"), c.node_hidden, c.feature_dim, rng)?,
        })
    }

    /// Spatial-edge update; slots whose mask is unset keep their state.
    /// `rel: [B, A, 2]`, `mask: [B, A]` (u8), `h: [B, A, H]`.
    pub fn spatial_edge_forward(&self, rel: &Tensor, mask: &Tensor, h: &Tensor) -> Result<Tensor> {
        let (b, a, _) = rel.dims3()?;
        let hd = self.config.edge_hidden;
        let x = self.spatial_embed.forward(&rel.reshape((b * a, 2))?)?;
        let updated = self.spatial_cell.forward(&x, &h.reshape((b * a, hd))?)?.reshape((b, a, hd))?;
        keep_where(&mask.unsqueeze(2)?, &updated, h)
    }

    /// Temporal-edge update from the ego displacement. `delta: [B, 2]`.
    pub fn temporal_edge_forward(&self, delta: &Tensor, h: &Tensor) -> Result<Tensor> {
        let x = self.temporal_embed.forward(delta)?;
        self.temporal_cell.forward(&x, h)
    }

    /// Multi-head attention pooling of spatial edges. Returns the attended
    /// vector `[B, attention_dim]` and weights `[B, heads, A]`.
    pub fn social_attention(&self, h_spatial: &Tensor, h_temporal: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, a, _) = h_spatial.dims3()?;
        let (nh, dh) = (self.config.heads, self.config.head_dim());
        let q = self.query.forward(h_spatial)?.reshape((b, a, nh, dh))?;
        let k = self.key.forward(h_temporal)?.reshape((b, 1, nh, dh))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let logits = (q.broadcast_mul(&k)?.sum(D::Minus1)? * scale)?; // [B, A, nh]
        let m = mask.unsqueeze(2)?.broadcast_as((b, a, nh))?.contiguous()?;
        let w = masked_softmax(&logits, &m, 1)?; // [B, A, nh]
        let v = self.value.forward(h_spatial)?.reshape((b, a, nh, dh))?;
        let attended = w.unsqueeze(3)?.broadcast_mul(&v)?.sum(1)?.reshape((b, nh * dh))?;
        Ok((attended, w.transpose(1, 2)?.contiguous()?))
    }

    /// Node fusion and recurrence; returns the social feature and the new node state.
    pub fn node_forward(&self, attended: &Tensor, ego: &Tensor, h_node: &Tensor) -> Result<(Tensor, Tensor)> {
        let e = self.ego_embed.forward(ego)?;
        let fused = self.node_mix.forward(&Tensor::cat(&[attended, &e], 1)?)?;
        let h = self.node_cell.forward(&fused, h_node)?;
        Ok((self.output.forward(&h)?, h))
    }

    /// One encoder step. Rows whose time mask is unset carry every hidden
    /// state through unchanged.
    pub fn step(&self, inputs: &StepInputs, hidden: &HiddenStates) -> Result<EncoderStep> {
        let b = inputs.temporal.dims()[0];
        let tmask = inputs.time_mask.reshape((b, 1))?;
        let h_temporal = self.temporal_edge_forward(&inputs.temporal, &hidden.temporal)?;
        let (attended, attention, h_spatial) = match &hidden.spatial {
            Some(hs) => {
                let a = hs.dims()[1];
                let slot_mask = inputs
                    .agent_mask
                    .broadcast_mul(&tmask.broadcast_as((b, a))?)?;
                let updated = self.spatial_edge_forward(&inputs.spatial, &slot_mask, hs)?;
                let (att, w) = self.social_attention(&updated, &h_temporal, &slot_mask)?;
                (att, Some(w), Some(updated))
            }
            None => (
                Tensor::zeros((b, self.config.attention_dim), hidden.temporal.dtype(), &Device::Cpu)?,
                None,
                None,
            ),
        };
        let (feature, h_node) = self.node_forward(&attended, &inputs.ego, &hidden.node)?;
        Ok(EncoderStep {
            feature,
            attention,
            hidden: HiddenStates {
                spatial: h_spatial,
                temporal: keep_where(&tmask, &h_temporal, &hidden.temporal)?,
                node: keep_where(&tmask, &h_node, &hidden.node)?,
            },
        })
    }

    /// Runs a padded batch from `hidden`, returning per-step features
    /// (`time` tensors of `[B, feature_dim]`) and the final state.
    pub fn forward_sequence(&self, batch: &PaddedBatch, hidden: HiddenStates, dtype: DType) -> Result<(Vec<Tensor>, HiddenStates)> {
        let mut hidden = hidden;
        let mut features = Vec::with_capacity(batch.time);
        for t in 0..batch.time {
            let out = self.step(&batch.step_inputs(t, dtype)?, &hidden)?;
            features.push(out.feature);
            hidden = out.hidden;
        }
        Ok((features, hidden))
    }
}

/// Builds single-step inputs for execution with identity slots
/// (`capacity` = number of other agents in the scene).
pub fn execution_inputs(steps: &[RawStep], capacity: usize, dtype: DType) -> Result<StepInputs> {
    let seqs: Vec<&[RawStep]> = steps.iter().map(std::slice::from_ref).collect();
    let mut batch = package_batch(&seqs)?;
    // Re-lay the compact slots onto the fixed identity layout.
    let b = steps.len();
    let mut spatial = vec![0.0; b * capacity * 2];
    let mut mask = vec![false; b * capacity];
    for (i, step) in steps.iter().enumerate() {
        if !step.valid {
            continue;
        }
        for o in &step.others {
            if o.slot >= capacity {
                return Err(Error::contract(format!("slot {} beyond capacity {capacity}", o.slot)));
            }
            mask[i * capacity + o.slot] = true;
            spatial[(i * capacity + o.slot) * 2..(i * capacity + o.slot) * 2 + 2].copy_from_slice(&o.relative_position);
        }
    }
    batch.max_agents = capacity;
    batch.spatial_inputs = spatial;
    batch.agent_mask = mask;
    batch.slot_maps = vec![(0..capacity).collect(); b];
    batch.step_inputs(0, dtype)
}
