//! Evaluates ORCA, writes the trajectory logs, recomputes the metrics from
//! the file and draws one SVG per episode.

use msa3c::harness::{compute_metrics, emit_plots, read_logs, run_evaluation, write_logs, Agent};
use msa3c::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/evaluate_and_plot".into());
    let out = std::path::Path::new(&out);

    let eval = run_evaluation(&cfg, Agent::Orca(&cfg.orca), "orca", 5)?;
    let logs = out.join("logs.ndjson");
    write_logs(&logs, &eval.logs)?;

    let recomputed = compute_metrics(&read_logs(&logs)?);
    assert_eq!(recomputed, eval.report);
    println!("{}", serde_json::to_string_pretty(&recomputed)?);

    for p in emit_plots(&eval.logs, &out.join("plots"))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
