mod common;

use common::*;
use msa3c::encoder::{EncoderConfig, RawStep};
use msa3c::replay::{pack_segments, segment_episode, ReplayBuffer, ReplayConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn enc() -> EncoderConfig {
    EncoderConfig::uniform(4, 1)
}

#[test]
fn ring_buffer_drops_the_oldest_segments() {
    let mut buf = ReplayBuffer::new(&ReplayConfig { capacity: 5, segment_len: 10 });
    for ep in 0..4u64 {
        // 25 steps -> 3 segments each
        buf.push_episode(&synthetic_trajectory(25, 2, ep, &enc())).unwrap();
    }
    assert_eq!(buf.len(), 5);
    let tags: Vec<(u64, u64)> = buf.segments().map(|s| (s.tag >> 16, s.tag & 0xffff)).collect();
    assert_eq!(tags, vec![(2, 1), (2, 2), (3, 0), (3, 1), (3, 2)]);
}

#[test]
fn sampling_is_seeded_and_without_replacement() {
    let mut buf = ReplayBuffer::new(&ReplayConfig { capacity: 100, segment_len: 10 });
    for ep in 0..6u64 {
        buf.push_episode(&synthetic_trajectory(30, 2, ep, &enc())).unwrap();
    }
    let a = buf.sample_indices(12, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = buf.sample_indices(12, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 12);
    assert!(buf.sample(19, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn saved_buffer_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = ReplayBuffer::new(&ReplayConfig { capacity: 7, segment_len: 10 });
    for ep in 0..4u64 {
        buf.push_episode(&synthetic_trajectory(17 + ep as usize, 3, ep, &enc())).unwrap();
    }
    let path = dir.path().join("replay.safetensors");
    buf.save(&path).unwrap();
    let back = ReplayBuffer::load(&path).unwrap();
    assert_eq!(back.capacity, 7);
    assert_eq!(back.segments().collect::<Vec<_>>(), buf.segments().collect::<Vec<_>>());
}

#[test]
fn mismatched_segment_length_is_rejected() {
    let mut buf = ReplayBuffer::new(&ReplayConfig { capacity: 7, segment_len: 5 });
    assert!(buf.push_episode(&synthetic_trajectory(12, 1, 0, &enc())).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segments_tile_the_episode(len in 1usize..60, n in 1usize..4, seed in 0u64..10_000) {
        let traj = synthetic_trajectory(len, n, seed, &enc());
        let segs = segment_episode(&traj).unwrap();
        prop_assert_eq!(segs.len(), len.div_ceil(10));
        for (k, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.len(), 10);
            for j in 0..10 {
                let t = k * 10 + j;
                prop_assert_eq!(s.valid[j], t < len);
                prop_assert_eq!(s.padding.contains(&j), t >= len);
                for i in 0..n {
                    if t < len {
                        let tr = &traj.transitions[t];
                        prop_assert_eq!(&s.steps[i][j], &tr.steps[i]);
                        prop_assert_eq!(s.actions[i][j], tr.actions[i]);
                        prop_assert_eq!(s.rewards[i][j], tr.rewards[i]);
                        prop_assert_eq!(s.terminal[i][j], tr.terminal[i]);
                    } else {
                        prop_assert!(s.terminal[i][j]);
                    }
                }
            }
            // the bootstrap observation closes every segment
            let t = k * 10 + 10;
            for i in 0..n {
                let expect = if t < len {
                    traj.transitions[t].steps[i].clone()
                } else if t == len {
                    traj.final_steps[i].clone()
                } else {
                    RawStep::padding()
                };
                prop_assert_eq!(&s.steps[i][10], &expect);
            }
        }
    }

    #[test]
    fn packing_keeps_rows_aligned(lens in proptest::collection::vec(1usize..25, 1..5), seed in 0u64..10_000) {
        let n = 2;
        let segs: Vec<_> = lens
            .iter()
            .enumerate()
            .flat_map(|(k, &len)| segment_episode(&synthetic_trajectory(len, n, seed + k as u64, &enc())).unwrap())
            .collect();
        let batch = pack_segments(&segs).unwrap();
        prop_assert_eq!(batch.n_segments, segs.len());
        prop_assert_eq!(batch.hidden.len(), segs.len() * n);
        let rows = batch.padded.unpack();
        for (b, s) in segs.iter().enumerate() {
            prop_assert_eq!(&batch.valid[b], &s.valid);
            for i in 0..n {
                prop_assert_eq!(&rows[b * n + i], &s.steps[i]);
                prop_assert_eq!(&batch.hidden[b * n + i], &s.hidden[i]);
                for j in 0..10 {
                    prop_assert_eq!(batch.actions[b][j][i], s.actions[i][j]);
                    prop_assert_eq!(batch.rewards[b][j][i], s.rewards[i][j]);
                    prop_assert_eq!(batch.terminal[b][j][i], s.terminal[i][j]);
                }
                for j in 0..=10 {
                    prop_assert_eq!(batch.active[b][j][i], s.active[i][j]);
                }
            }
        }
    }
}
