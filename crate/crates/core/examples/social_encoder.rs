//! Encodes two observation histories of different length and crowd size in
//! one padded batch, then shows the fixed-width features and the attention
//! each robot pays to its neighbours.

use candle_core::DType;
use msa3c::encoder::{package_batch, EncoderConfig, HiddenStates, RawStep, SlotEntry, SocialEncoder, EGO_DIM};
use msa3c::nn::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn step(t: usize, neighbours: &[(usize, [f64; 2])]) -> RawStep {
    let mut ego = [0.0; EGO_DIM];
    ego[0] = 0.2 * t as f64; // x
    ego[2] = 0.3; // radius
    ego[3] = 5.0 - 0.2 * t as f64; // goal offset
    ego[5] = 1.0; // v_pref
    RawStep {
        ego,
        ego_delta: [0.2, 0.0],
        others: neighbours
            .iter()
            .map(|&(slot, p)| SlotEntry {
                slot,
                relative_position: p,
            })
            .collect(),
        valid: true,
    }
}

fn main() -> anyhow::Result<()> {
    let cfg = EncoderConfig::uniform(16, 4);
    let mut store = ParamStore::new(DType::F32);
    let encoder = SocialEncoder::new(&mut store, "encoder", &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;

    // robot A: 4 steps, one neighbour drifting closer; robot B: 2 steps, three neighbours
    let a: Vec<RawStep> = (0..4).map(|t| step(t, &[(0, [3.0 - 0.5 * t as f64, 0.4])])).collect();
    let mut b: Vec<RawStep> = (0..2)
        .map(|t| step(t, &[(0, [1.0, 1.0]), (2, [-2.0, 0.5]), (5, [0.5, -0.8 + 0.1 * t as f64])]))
        .collect();
    // shorter histories are padded to the batch length; padding never reaches the features
    b.resize(a.len(), RawStep::padding());
    let batch = package_batch(&[&a, &b])?;
    println!("batch {} x {} steps, {} agent slots", batch.batch, batch.time, batch.max_agents);

    let mut hidden = HiddenStates::zeros(batch.batch, batch.max_agents, &cfg, DType::F32)?;
    for t in 0..batch.time {
        let out = encoder.step(&batch.step_inputs(t, DType::F32)?, &hidden)?;
        let feats = out.feature.to_vec2::<f32>()?;
        for (row, f) in feats.iter().enumerate() {
            let norm = f.iter().map(|x| x * x).sum::<f32>().sqrt();
            print!("t={t} robot {}: |feature| {norm:.3}", ["A", "B"][row]);
            if let Some(att) = &out.attention {
                // mean over heads
                let w = att.mean(1)?.to_vec2::<f32>()?;
                let shown: Vec<String> = w[row].iter().map(|x| format!("{x:.2}")).collect();
                print!("  attention [{}]", shown.join(" "));
            }
            println!();
        }
        hidden = out.hidden;
    }
    Ok(())
}
