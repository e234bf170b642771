use std::path::Path;

use mvdr_core::encoder::Mode;
use mvdr_core::pipeline::{artifacts, run, synthetic_experiment_config, PipelineConfig};
use mvdr_core::synthetic::{generate, SyntheticConfig, SyntheticDataset};

fn setup(root: &Path, mode: Mode) -> PipelineConfig {
    let data = generate(&SyntheticConfig {
        n_docs: 120,
        ..Default::default()
    })
    .unwrap();
    let data_dir = data.write(&root.join("data")).unwrap();
    let mut cfg = synthetic_experiment_config();
    cfg.mode = mode;
    cfg.train.epochs_pretrain = 1;
    cfg.train.epochs_finetune = 2;
    SyntheticDataset::wire_paths(&data_dir, &mut cfg.paths);
    cfg.paths.out_dir = root.join("out");
    cfg
}

#[test]
fn writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::De, Mode::Dce] {
        let cfg = setup(&dir.path().join(mode.to_string()), mode);
        let outcome = run(&cfg).unwrap();
        assert_eq!(outcome.reports.len(), 3);
        for name in [
            artifacts::GEN_QUERIES,
            artifacts::CHECKPOINT,
            artifacts::LOSS,
            artifacts::INDEX,
            artifacts::RUN,
            artifacts::METRICS,
        ] {
            assert!(cfg.out(name).is_file(), "{name} missing");
        }
        for name in ["quality.csv", "diversity.csv", "buckets.csv", "sweep.csv"] {
            assert!(cfg.out(artifacts::ANALYSIS).join(name).is_file());
        }
        let run = std::fs::read_to_string(&outcome.run_path).unwrap();
        assert!(run
            .lines()
            .next()
            .unwrap()
            .ends_with(&format!("mvdr-{mode}")));
    }
}

#[test]
fn config_file_round_trip_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), Mode::Dce);
    let path = dir.path().join("run.toml");
    cfg.save(&path).unwrap();
    let loaded = PipelineConfig::load(&path).unwrap();
    assert_eq!(loaded, cfg);
}

#[test]
fn missing_triples_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), Mode::Dce);
    cfg.paths.triples = None;
    assert!(run(&cfg).is_err());
}
