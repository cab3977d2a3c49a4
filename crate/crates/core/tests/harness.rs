mod common;

use common::*;
use msa3c::harness::{
    compute_metrics, emit_plots, parse_logs, plot_episode, read_logs, run_evaluation, run_training, write_logs, Agent,
};
use msa3c::checkpoint::Checkpoint;
use msa3c::{Error, ExperimentConfig};

#[test]
fn evaluation_is_reproducible_and_metrics_survive_the_log_file() {
    let cfg = tiny_experiment(1);
    let a = run_evaluation(&cfg, Agent::Orca(&cfg.orca), "orca", 6).unwrap();
    let b = run_evaluation(&cfg, Agent::Orca(&cfg.orca), "orca", 6).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.report, b.report);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logs.ndjson");
    write_logs(&path, &a.logs).unwrap();
    let back = read_logs(&path).unwrap();
    assert_eq!(back, a.logs);
    assert_eq!(compute_metrics(&back), a.report);
}

#[test]
fn every_policy_faces_the_same_crowd() {
    let cfg = tiny_experiment(1);
    let orca = run_evaluation(&cfg, Agent::Orca(&cfg.orca), "orca", 3).unwrap();
    let random = run_evaluation(&cfg, Agent::Random, "random", 3).unwrap();
    for (o, r) in orca.logs.iter().zip(&random.logs) {
        assert_eq!(o.header.seed, r.header.seed);
        let first_peds = |l: &msa3c::harness::EpisodeLog| -> Vec<(f64, f64)> {
            l.records
                .iter()
                .filter(|x| x.step == 0 && x.kind == msa3c::AgentKind::Pedestrian)
                .map(|x| (x.x, x.y))
                .collect()
        };
        assert_eq!(first_peds(o), first_peds(r));
    }
}

#[test]
fn malformed_log_names_its_line() {
    let cfg = tiny_experiment(1);
    let out = run_evaluation(&cfg, Agent::Random, "random", 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logs.ndjson");
    write_logs(&path, &out.logs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"record\": \"agent\", \"step\": ";
    match parse_logs(lines.iter().copied()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(parse_logs(lines[1..2].iter().copied()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn plots_are_deterministic_and_coloured() {
    let cfg = tiny_experiment(1);
    let out = run_evaluation(&cfg, Agent::Orca(&cfg.orca), "orca", 2).unwrap();
    let svg = plot_episode(Some(&out.logs[0]));
    assert_eq!(svg, plot_episode(Some(&out.logs[0])));
    assert!(svg.contains("#d62728"), "pedestrians in red");
    assert!(svg.contains(r##"stroke="#000000""##), "robots in black");
    let tracks = svg.matches("<polyline").count();
    assert_eq!(tracks, cfg.world.n_robots + cfg.world.n_pedestrians);

    let dir = tempfile::tempdir().unwrap();
    let files = emit_plots(&out.logs, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let empty = emit_plots(&[], &dir.path().join("none")).unwrap();
    assert_eq!(empty.len(), 1);
    let doc = std::fs::read_to_string(&empty[0]).unwrap();
    assert!(doc.starts_with("<svg") && !doc.contains("<polyline"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let split_dir = tempfile::tempdir().unwrap();
    let full = run_training(&tiny_experiment(12), full_dir.path(), false, |_| {}).unwrap();
    // stop between checkpoints: the resume restarts from episode 5
    run_training(&tiny_experiment(7), split_dir.path(), false, |_| {}).unwrap();
    let resumed = run_training(&tiny_experiment(12), split_dir.path(), true, |_| {}).unwrap();
    assert_eq!(resumed.stats, full.stats);
    // reports before the resume carry the fingerprint of the shorter run
    let strip = |e: &[(usize, msa3c::harness::MetricsReport)]| -> Vec<_> {
        e.iter()
            .map(|(k, r)| {
                let mut r = r.clone();
                r.config_fingerprint.clear();
                (*k, r)
            })
            .collect()
    };
    assert_eq!(strip(&resumed.evaluations), strip(&full.evaluations));
    let load = |d: &std::path::Path| Checkpoint::load(&d.join("learner.safetensors"), "msa3c-learner").unwrap();
    let (a, b) = (load(full_dir.path()), load(split_dir.path()));
    assert_eq!(a.metadata, b.metadata);
    assert_eq!(a.tensors.keys().collect::<Vec<_>>(), b.tensors.keys().collect::<Vec<_>>());
    for (name, t) in &a.tensors {
        assert_eq!(values(t), values(&b.tensors[name]), "{name}");
    }
}

#[test]
fn resuming_under_another_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    run_training(&tiny_experiment(5), dir.path(), false, |_| {}).unwrap();
    let mut other = tiny_experiment(10);
    other.learner.gamma = 0.5;
    assert!(matches!(run_training(&other, dir.path(), true, |_| {}), Err(Error::Checkpoint(_))));
}

#[test]
fn training_stage_flips_once_at_the_configured_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let run = run_training(&tiny_experiment(9), dir.path(), false, |s| seen.push(s.episode)).unwrap();
    assert_eq!(seen, (0..9).collect::<Vec<_>>());
    let stages: Vec<u8> = run.stats.iter().map(|s| s.stage).collect();
    assert_eq!(stages, [1, 1, 1, 1, 1, 1, 2, 2, 2]);
    // updates begin once warm-up ends
    assert!(run.stats[..2].iter().all(|s| s.updates == 0));
    for w in run.stats.windows(2) {
        assert!([0, 2].contains(&(w[1].updates - w[0].updates)));
    }
    assert_eq!(run.stats[8].updates - run.stats[7].updates, 2);
    assert_eq!(run.evaluations.iter().map(|e| e.0).collect::<Vec<_>>(), [3, 7]);
}

#[test]
fn classical_policies_cannot_be_trained() {
    let mut cfg = tiny_experiment(2);
    cfg.policy = msa3c::harness::PolicyKind::Orca;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_training(&cfg, dir.path(), false, |_| {}), Err(Error::ConfigKey { .. })));
}

#[test]
fn shipped_presets_parse() {
    let full = load_preset("full.toml");
    assert_eq!(full.training.episodes, 50_000);
    assert_eq!(full.world.n_robots, 3);
    assert_eq!(full.world.n_pedestrians, 5);
    let desk = load_preset("desk.toml");
    assert!(desk.training.episodes < full.training.episodes);
    assert_eq!(desk.world, full.world);
}

#[test]
fn unknown_config_key_is_reported_with_its_table() {
    let err = ExperimentConfig::from_toml_str("[world]\nn_robots = 2\nwarp_drive = true\n").unwrap_err();
    match err {
        Error::ConfigKey { key, .. } => assert_eq!(key, "world.warp_drive"),
        other => panic!("{other:?}"),
    }
    let err = ExperimentConfig::from_toml_str("[training]\nepisodes = 0\n").unwrap_err();
    assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "training.episodes"));
}
