//! Off-policy storage of joint multi-robot experience as fixed-length,
//! non-overlapping rollout segments with padding records and the encoder
//! state at each segment start.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{package_batch, PaddedBatch, RawStep, SlotEntry, StoredHidden, EGO_DIM};
use crate::error::{Error, Result};

const CONTAINER_KIND: &str = "msa3c-replay";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub segment_len: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 200_000,
            segment_len: 10,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::ConfigKey {
                key: "replay.capacity".into(),
                message: "must be > 0".into(),
            });
        }
        if self.segment_len == 0 {
            return Err(Error::ConfigKey {
                key: "replay.segment_len".into(),
                message: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

/// One joint environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Encoder input of each robot before acting.
    pub steps: Vec<RawStep>,
    pub actions: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    /// Robots that were in the scene and acted.
    pub active: Vec<bool>,
    /// Robots whose value must not bootstrap past this step.
    pub terminal: Vec<bool>,
}

/// A complete episode as collected, before segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrajectory {
    pub n_robots: usize,
    pub segment_len: usize,
    pub transitions: Vec<Transition>,
    /// Encoder input of each robot after the last transition.
    pub final_steps: Vec<RawStep>,
    /// Which robots are still present after the last transition.
    pub final_active: Vec<bool>,
    /// Encoder state per robot before transitions `0, L, 2L, ...`.
    pub boundary_hidden: Vec<Vec<StoredHidden>>,
    pub tag: u64,
}

impl EpisodeTrajectory {
    pub fn new(n_robots: usize, segment_len: usize, tag: u64) -> Self {
        Self {
            n_robots,
            segment_len,
            transitions: Vec::new(),
            final_steps: Vec::new(),
            final_active: Vec::new(),
            boundary_hidden: Vec::new(),
            tag,
        }
    }

    /// Whether the next pushed transition starts a new segment.
    pub fn needs_hidden(&self) -> bool {
        self.transitions.len() % self.segment_len == 0
    }

    pub fn push(&mut self, transition: Transition, hidden_before: Option<Vec<StoredHidden>>) -> Result<()> {
        let n = self.n_robots;
        if transition.steps.len() != n
            || transition.actions.len() != n
            || transition.rewards.len() != n
            || transition.active.len() != n
            || transition.terminal.len() != n
        {
            return Err(Error::contract(format!("transition does not cover {n} robots")));
        }
        if self.needs_hidden() {
            let h = hidden_before.ok_or_else(|| Error::contract("segment start requires the encoder state"))?;
            if h.len() != n {
                return Err(Error::contract("hidden state count differs from robot count"));
            }
            self.boundary_hidden.push(h);
        }
        self.transitions.push(transition);
        Ok(())
    }

    pub fn finish(&mut self, final_steps: Vec<RawStep>, final_active: Vec<bool>) -> Result<()> {
        if final_steps.len() != self.n_robots || final_active.len() != self.n_robots {
            return Err(Error::contract("final observation does not cover every robot"));
        }
        self.final_steps = final_steps;
        self.final_active = final_active;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Fixed-length slice of joint experience. Per-robot arrays are indexed
/// `[robot][step]`; observation-like arrays carry one extra trailing entry
/// holding the next observation of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSegment {
    pub steps: Vec<Vec<RawStep>>,
    pub actions: Vec<Vec<[f64; 2]>>,
    pub rewards: Vec<Vec<f64>>,
    pub active: Vec<Vec<bool>>,
    pub terminal: Vec<Vec<bool>>,
    /// Time mask: false at padded pseudo-steps.
    pub valid: Vec<bool>,
    /// Indices of padded pseudo-steps.
    pub padding: Vec<usize>,
    pub hidden: Vec<StoredHidden>,
    pub tag: u64,
}

impl RolloutSegment {
    pub fn n_robots(&self) -> usize {
        self.actions.len()
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

/// Splits a trajectory into `ceil(T / L)` segments, padding the last one.
pub fn segment_episode(traj: &EpisodeTrajectory) -> Result<Vec<RolloutSegment>> {
    let t_len = traj.transitions.len();
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let l = traj.segment_len;
    let n = traj.n_robots;
    if traj.final_steps.len() != n {
        return Err(Error::contract("trajectory not finished"));
    }
    let n_segments = t_len.div_ceil(l);
    if traj.boundary_hidden.len() != n_segments {
        return Err(Error::contract("missing segment-start encoder state"));
    }
    let obs_at = |t: usize, i: usize| -> RawStep {
        if t < t_len {
            traj.transitions[t].steps[i].clone()
        } else if t == t_len {
            traj.final_steps[i].clone()
        } else {
            RawStep::padding()
        }
    };
    let active_at = |t: usize, i: usize| -> bool {
        if t < t_len {
            traj.transitions[t].active[i]
        } else if t == t_len {
            traj.final_active[i]
        } else {
            false
        }
    };
    let mut out = Vec::with_capacity(n_segments);
    for k in 0..n_segments {
        let start = k * l;
        let mut seg = RolloutSegment {
            steps: vec![Vec::with_capacity(l + 1); n],
            actions: vec![Vec::with_capacity(l); n],
            rewards: vec![Vec::with_capacity(l); n],
            active: vec![Vec::with_capacity(l + 1); n],
            terminal: vec![Vec::with_capacity(l); n],
            valid: Vec::with_capacity(l),
            padding: Vec::new(),
            hidden: traj.boundary_hidden[k].clone(),
            tag: traj.tag.wrapping_mul(1 << 16).wrapping_add(k as u64),
        };
        for j in 0..=l {
            let t = start + j;
            for i in 0..n {
                seg.steps[i].push(obs_at(t, i));
                seg.active[i].push(active_at(t, i));
            }
            if j == l {
                break;
            }
            let real = t < t_len;
            seg.valid.push(real);
            if !real {
                seg.padding.push(j);
            }
            for i in 0..n {
                if real {
                    let tr = &traj.transitions[t];
                    seg.actions[i].push(tr.actions[i]);
                    seg.rewards[i].push(tr.rewards[i]);
                    seg.terminal[i].push(tr.terminal[i]);
                } else {
                    seg.actions[i].push([0.0, 0.0]);
                    seg.rewards[i].push(0.0);
                    seg.terminal[i].push(true);
                }
            }
        }
        out.push(seg);
    }
    Ok(out)
}

/// Ring buffer of segments; the oldest are overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub segment_len: usize,
    segments: VecDeque<RolloutSegment>,
}

impl ReplayBuffer {
    pub fn new(config: &ReplayConfig) -> Self {
        Self {
            capacity: config.capacity,
            segment_len: config.segment_len,
            segments: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = &RolloutSegment> {
        self.segments.iter()
    }

    pub fn push_segment(&mut self, seg: RolloutSegment) {
        if self.segments.len() == self.capacity {
            self.segments.pop_front();
        }
        self.segments.push_back(seg);
    }

    /// Segments and stores an episode; returns the number of segments added.
    pub fn push_episode(&mut self, traj: &EpisodeTrajectory) -> Result<usize> {
        if traj.segment_len != self.segment_len {
            return Err(Error::contract(format!(
                "trajectory segment length {} differs from buffer's {}",
                traj.segment_len, self.segment_len
            )));
        }
        let segs = segment_episode(traj)?;
        let n = segs.len();
        for s in segs {
            self.push_segment(s);
        }
        Ok(n)
    }

    /// Draws `batch_size` distinct segments uniformly at random.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<RolloutSegment>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.segments[i].clone())
            .collect())
    }

    pub fn sample_indices(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.segments.len() < batch_size {
            return Err(Error::NotReady {
                available: self.segments.len(),
                requested: batch_size,
            });
        }
        Ok(index::sample(rng, self.segments.len(), batch_size).into_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CONTAINER_KIND)?)
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CONTAINER_KIND);
        ck.metadata.insert("capacity".into(), self.capacity.to_string());
        ck.metadata.insert("segment_len".into(), self.segment_len.to_string());
        let s_count = self.segments.len();
        ck.metadata.insert("segments".into(), s_count.to_string());
        let l = self.segment_len;
        let n = self.segments.front().map_or(0, |s| s.n_robots());
        ck.metadata.insert("robots".into(), n.to_string());
        let he = self.segments.front().map_or(0, |s| s.hidden.first().map_or(0, |h| h.temporal.len()));
        let hn = self.segments.front().map_or(0, |s| s.hidden.first().map_or(0, |h| h.node.len()));
        let hs = self.segments.front().map_or(0, |s| s.hidden.first().map_or(0, |h| h.spatial.len()));
        let dev = Device::Cpu;

        let mut ego = Vec::new();
        let mut delta = Vec::new();
        let mut step_valid = Vec::new();
        let mut counts = Vec::new();
        let mut others = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut active = Vec::new();
        let mut terminal = Vec::new();
        let mut valid = Vec::new();
        let (mut h_s, mut h_t, mut h_n) = (Vec::new(), Vec::new(), Vec::new());
        let mut tags = Vec::new();
        for seg in &self.segments {
            if seg.n_robots() != n || seg.len() != l {
                return Err(Error::contract("buffer holds segments of mixed shape"));
            }
            tags.push(seg.tag as i64);
            valid.extend(seg.valid.iter().map(|&v| v as u8));
            for i in 0..n {
                for st in &seg.steps[i] {
                    ego.extend_from_slice(&st.ego);
                    delta.extend_from_slice(&st.ego_delta);
                    step_valid.push(st.valid as u8);
                    counts.push(st.others.len() as i64);
                    for o in &st.others {
                        others.extend_from_slice(&[o.slot as f64, o.relative_position[0], o.relative_position[1]]);
                    }
                }
                for a in &seg.actions[i] {
                    actions.extend_from_slice(a);
                }
                rewards.extend_from_slice(&seg.rewards[i]);
                active.extend(seg.active[i].iter().map(|&v| v as u8));
                terminal.extend(seg.terminal[i].iter().map(|&v| v as u8));
                let h = &seg.hidden[i];
                if h.spatial.len() != hs || h.temporal.len() != he || h.node.len() != hn {
                    return Err(Error::contract("buffer holds hidden states of mixed width"));
                }
                h_s.extend_from_slice(&h.spatial);
                h_t.extend_from_slice(&h.temporal);
                h_n.extend_from_slice(&h.node);
            }
        }
        // A trailing dummy row keeps every array non-empty.
        others.extend_from_slice(&[0.0; 3]);
        let k = others.len() / 3;
        let mut put = |name: &str, t: Tensor| ck.insert(name, t);
        put("ego", Tensor::from_vec(ego, (s_count, n, l + 1, EGO_DIM), &dev)?);
        put("ego_delta", Tensor::from_vec(delta, (s_count, n, l + 1, 2), &dev)?);
        put("step_valid", Tensor::from_vec(step_valid, (s_count, n, l + 1), &dev)?);
        put("others_count", Tensor::from_vec(counts, (s_count, n, l + 1), &dev)?);
        put("others", Tensor::from_vec(others, (k, 3), &dev)?);
        put("actions", Tensor::from_vec(actions, (s_count, n, l, 2), &dev)?);
        put("rewards", Tensor::from_vec(rewards, (s_count, n, l), &dev)?);
        put("active", Tensor::from_vec(active, (s_count, n, l + 1), &dev)?);
        put("terminal", Tensor::from_vec(terminal, (s_count, n, l), &dev)?);
        put("valid", Tensor::from_vec(valid, (s_count, l), &dev)?);
        put("hidden_spatial", Tensor::from_vec(h_s, (s_count, n, hs), &dev)?);
        put("hidden_temporal", Tensor::from_vec(h_t, (s_count, n, he), &dev)?);
        put("hidden_node", Tensor::from_vec(h_n, (s_count, n, hn), &dev)?);
        put("tags", Tensor::from_vec(tags, s_count, &dev)?);
        Ok(ck)
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let parse = |k: &str| -> Result<usize> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata {k} is not an integer")))
        };
        let capacity = parse("capacity")?;
        let l = parse("segment_len")?;
        let s_count = parse("segments")?;
        let n = parse("robots")?;
        let flat_f64 = |name: &str| -> Result<Vec<f64>> { Ok(ck.tensor(name)?.flatten_all()?.to_vec1::<f64>()?) };
        let flat_u8 = |name: &str| -> Result<Vec<u8>> { Ok(ck.tensor(name)?.flatten_all()?.to_vec1::<u8>()?) };
        let flat_i64 = |name: &str| -> Result<Vec<i64>> { Ok(ck.tensor(name)?.flatten_all()?.to_vec1::<i64>()?) };
        let flat_f32 = |name: &str| -> Result<Vec<f32>> { Ok(ck.tensor(name)?.flatten_all()?.to_vec1::<f32>()?) };
        let ego = flat_f64("ego")?;
        let delta = flat_f64("ego_delta")?;
        let step_valid = flat_u8("step_valid")?;
        let counts = flat_i64("others_count")?;
        let others = flat_f64("others")?;
        let actions = flat_f64("actions")?;
        let rewards = flat_f64("rewards")?;
        let active = flat_u8("active")?;
        let terminal = flat_u8("terminal")?;
        let valid = flat_u8("valid")?;
        let h_s = flat_f32("hidden_spatial")?;
        let h_t = flat_f32("hidden_temporal")?;
        let h_n = flat_f32("hidden_node")?;
        let tags = flat_i64("tags")?;
        if tags.len() != s_count || valid.len() != s_count * l || ego.len() != s_count * n * (l + 1) * EGO_DIM {
            return Err(Error::Checkpoint("replay arrays disagree with metadata".into()));
        }
        let hs = if s_count * n > 0 { h_s.len() / (s_count * n) } else { 0 };
        let he = if s_count * n > 0 { h_t.len() / (s_count * n) } else { 0 };
        let hn = if s_count * n > 0 { h_n.len() / (s_count * n) } else { 0 };

        let mut buf = Self {
            capacity,
            segment_len: l,
            segments: VecDeque::with_capacity(s_count),
        };
        let mut cursor = 0usize;
        for s in 0..s_count {
            let mut seg = RolloutSegment {
                steps: Vec::with_capacity(n),
                actions: Vec::with_capacity(n),
                rewards: Vec::with_capacity(n),
                active: Vec::with_capacity(n),
                terminal: Vec::with_capacity(n),
                valid: valid[s * l..(s + 1) * l].iter().map(|&v| v != 0).collect(),
                padding: Vec::new(),
                hidden: Vec::with_capacity(n),
                tag: tags[s] as u64,
            };
            seg.padding = seg.valid.iter().enumerate().filter(|(_, v)| !**v).map(|(j, _)| j).collect();
            for i in 0..n {
                let si = s * n + i;
                let mut steps = Vec::with_capacity(l + 1);
                for j in 0..=l {
                    let idx = si * (l + 1) + j;
                    let mut e = [0.0; EGO_DIM];
                    e.copy_from_slice(&ego[idx * EGO_DIM..(idx + 1) * EGO_DIM]);
                    let c = counts[idx] as usize;
                    if (cursor + c) * 3 > others.len() {
                        return Err(Error::Checkpoint("replay neighbour table truncated".into()));
                    }
                    let os = (0..c)
                        .map(|q| {
                            let r = (cursor + q) * 3;
                            SlotEntry {
                                slot: others[r] as usize,
                                relative_position: [others[r + 1], others[r + 2]],
                            }
                        })
                        .collect();
                    cursor += c;
                    steps.push(RawStep {
                        ego: e,
                        ego_delta: [delta[idx * 2], delta[idx * 2 + 1]],
                        others: os,
                        valid: step_valid[idx] != 0,
                    });
                }
                seg.steps.push(steps);
                seg.actions.push((0..l).map(|j| {
                    let idx = (si * l + j) * 2;
                    [actions[idx], actions[idx + 1]]
                }).collect());
                seg.rewards.push(rewards[si * l..(si + 1) * l].to_vec());
                seg.active.push(active[si * (l + 1)..(si + 1) * (l + 1)].iter().map(|&v| v != 0).collect());
                seg.terminal.push(terminal[si * l..(si + 1) * l].iter().map(|&v| v != 0).collect());
                seg.hidden.push(StoredHidden {
                    spatial: h_s[si * hs..(si + 1) * hs].to_vec(),
                    temporal: h_t[si * he..(si + 1) * he].to_vec(),
                    node: h_n[si * hn..(si + 1) * hn].to_vec(),
                });
            }
            buf.segments.push_back(seg);
        }
        Ok(buf)
    }
}

/// Joint-aligned training view of sampled segments. Encoder rows are laid
/// out segment-major, robot-minor: row `b * n_robots + i`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub n_segments: usize,
    pub n_robots: usize,
    pub segment_len: usize,
    /// Observations `0..=L` of every (segment, robot) row.
    pub padded: PaddedBatch,
    /// `[B][L][N]`
    pub actions: Vec<Vec<Vec<[f64; 2]>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub terminal: Vec<Vec<Vec<bool>>>,
    /// `[B][L + 1][N]`
    pub active: Vec<Vec<Vec<bool>>>,
    /// `[B][L]`
    pub valid: Vec<Vec<bool>>,
    /// Row-aligned segment-start encoder states.
    pub hidden: Vec<StoredHidden>,
}

pub fn pack_segments(segments: &[RolloutSegment]) -> Result<TrainingBatch> {
    let first = segments.first().ok_or_else(|| Error::contract("empty segment batch"))?;
    let n = first.n_robots();
    let l = first.len();
    if segments.iter().any(|s| s.n_robots() != n || s.len() != l) {
        return Err(Error::contract("segments differ in robot count or length"));
    }
    let rows: Vec<&[RawStep]> = segments
        .iter()
        .flat_map(|s| s.steps.iter().map(Vec::as_slice))
        .collect();
    let padded = package_batch(&rows)?;
    let transpose = |f: &dyn Fn(&RolloutSegment, usize, usize) -> bool, len: usize| -> Vec<Vec<Vec<bool>>> {
        segments
            .iter()
            .map(|s| (0..len).map(|j| (0..n).map(|i| f(s, i, j)).collect()).collect())
            .collect()
    };
    Ok(TrainingBatch {
        n_segments: segments.len(),
        n_robots: n,
        segment_len: l,
        actions: segments
            .iter()
            .map(|s| (0..l).map(|j| (0..n).map(|i| s.actions[i][j]).collect()).collect())
            .collect(),
        rewards: segments
            .iter()
            .map(|s| (0..l).map(|j| (0..n).map(|i| s.rewards[i][j]).collect()).collect())
            .collect(),
        terminal: transpose(&|s, i, j| s.terminal[i][j], l),
        active: transpose(&|s, i, j| s.active[i][j], l + 1),
        valid: segments.iter().map(|s| s.valid.clone()).collect(),
        hidden: segments.iter().flat_map(|s| s.hidden.iter().cloned()).collect(),
        padded,
    })
}

/// Per-episode statistics kept alongside training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub segments: usize,
    pub pushed_episodes: usize,
    pub padded_steps: usize,
}

pub fn buffer_stats(buf: &ReplayBuffer) -> BufferStats {
    let mut tags = BTreeMap::new();
    let mut padded = 0;
    for s in buf.segments() {
        tags.insert(s.tag >> 16, ());
        padded += s.padding.len();
    }
    BufferStats {
        segments: buf.len(),
        pushed_episodes: tags.len(),
        padded_steps: padded,
    }
}
